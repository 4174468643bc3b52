//! Hard-core Fock basis in a fixed particle-number sector and the sparse
//! Hamiltonian `H = -J Σ_<ij> (b_i† b_j + h.c.) + U Σ_<ij> n_i n_j`.
//!
//! Occupations are bitmasks (bit `i` set means site `i` holds a boson).
//! States are indexed by their colexicographic rank, which coincides with
//! ascending numeric order of the masks.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{LatticeGraph, MAX_SITES};

/// Pascal triangle up to `MAX_SITES`, `table[n][k] = C(n, k)`.
fn binomial_table() -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; MAX_SITES + 2]; MAX_SITES + 2];
    for n in 0..table.len() {
        table[n][0] = 1;
        for k in 1..=n {
            table[n][k] = table[n - 1][k - 1].saturating_add(table[n - 1][k]);
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FockBasis {
    n_sites: usize,
    n_particles: usize,
    states: Vec<u64>,
    binom: Vec<Vec<u64>>,
}

impl FockBasis {
    /// Enumerates all `C(n, N)` occupation masks with `N` set bits, ascending.
    pub fn enumerate(n_sites: usize, n_particles: usize) -> Result<Self> {
        if n_particles > n_sites || n_sites > MAX_SITES || n_sites == 0 {
            return Err(Error::InvalidSector { sites: n_sites, particles: n_particles });
        }
        let binom = binomial_table();
        let dim = binom[n_sites][n_particles];
        if dim > (1 << 31) {
            return Err(Error::InvalidSector { sites: n_sites, particles: n_particles });
        }
        let mut states = Vec::with_capacity(dim as usize);
        if n_particles == 0 {
            states.push(0);
        } else {
            // Gosper's hack: next larger integer with the same popcount
            let limit = if n_sites == 64 { u64::MAX } else { (1u64 << n_sites) - 1 };
            let mut s: u64 = (1u64 << n_particles) - 1;
            loop {
                states.push(s);
                if states.len() as u64 == dim {
                    break;
                }
                let c = s & s.wrapping_neg();
                let r = s + c;
                s = (((r ^ s) >> 2) / c) | r;
                debug_assert!(s <= limit);
            }
        }
        Ok(FockBasis { n_sites, n_particles, states, binom })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn state(&self, index: usize) -> u64 {
        self.states[index]
    }

    /// Dense index of an occupation mask, or `None` if it lies outside the sector.
    pub fn index_of(&self, mask: u64) -> Option<usize> {
        if mask.count_ones() as usize != self.n_particles
            || (self.n_sites < 64 && mask >> self.n_sites != 0)
        {
            return None;
        }
        let mut rank = 0u64;
        let mut m = mask;
        let mut k = 1;
        while m != 0 {
            let pos = m.trailing_zeros() as usize;
            rank += self.binom[pos][k];
            k += 1;
            m &= m - 1;
        }
        Some(rank as usize)
    }

    /// Mask with the given sites occupied, validated against this sector.
    pub fn mask_from_sites(&self, sites: &[usize]) -> Result<u64> {
        let mut mask = 0u64;
        for &s in sites {
            if s >= self.n_sites {
                return Err(Error::validation("fock", format!("site {s} outside 0..{}", self.n_sites)));
            }
            if mask & (1 << s) != 0 {
                return Err(Error::validation("fock", format!("site {s} listed twice")));
            }
            mask |= 1 << s;
        }
        if sites.len() != self.n_particles {
            return Err(Error::validation(
                "fock",
                format!("{} initial sites given for {} particles", sites.len(), self.n_particles),
            ));
        }
        Ok(mask)
    }
}

/// Real symmetric Hamiltonian stored as its upper triangle, with a
/// symmetric CSR copy for matrix-vector products.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    dim: usize,
    hopping: f64,
    interaction: f64,
    upper: Vec<(usize, usize, f64)>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseHamiltonian {
    /// Assembles the hard-core boson Hamiltonian on `graph` in `basis`.
    pub fn build(graph: &LatticeGraph, basis: &FockBasis, hopping: f64, interaction: f64) -> Result<Self> {
        if graph.n_sites() != basis.n_sites() {
            return Err(Error::DimensionMismatch {
                context: "fock: lattice vs basis sites",
                expected: graph.n_sites(),
                actual: basis.n_sites(),
            });
        }
        let dim = basis.dim();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(dim);
        for (row, &s) in basis.states().iter().enumerate() {
            let mut entries = Vec::new();
            let mut diag = 0.0;
            for &(i, j) in graph.edges() {
                let (oi, oj) = ((s >> i) & 1, (s >> j) & 1);
                if oi == 1 && oj == 1 {
                    diag += interaction;
                } else if oi != oj {
                    // hop across the edge; a hop onto an occupied site has no element
                    let t = s ^ ((1u64 << i) | (1u64 << j));
                    let col = basis.index_of(t).expect("hop preserves particle number");
                    entries.push((col, -hopping));
                }
            }
            if diag != 0.0 {
                entries.push((row, diag));
            }
            entries.sort_by_key(|e| e.0);
            rows.push(entries);
        }
        let mut upper = Vec::new();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (r, entries) in rows.into_iter().enumerate() {
            for (c, v) in entries {
                if c >= r {
                    upper.push((r, c, v));
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseHamiltonian { dim, hopping, interaction, upper, row_ptr, cols, vals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hopping(&self) -> f64 {
        self.hopping
    }

    pub fn interaction(&self) -> f64 {
        self.interaction
    }

    /// Upper-triangle entries `(row, col, value)` with `row <= col`, ascending.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.upper
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `H v`.
    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        if v.len() != self.dim || out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "fock: apply_hamiltonian",
                expected: self.dim,
                actual: if v.len() != self.dim { v.len() } else { out.len() },
            });
        }
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += v[self.cols[idx]] * self.vals[idx];
            }
            *o = acc;
        }
        Ok(())
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.upper {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    /// Coordinate dump, one `row col value` line per stored entry.
    pub fn to_coo(&self) -> String {
        let mut out = String::with_capacity(self.upper.len() * 16);
        for &(r, c, v) in &self.upper {
            out.push_str(&format!("{r} {c} {v}\n"));
        }
        out
    }
}

/// Maps amplitudes in the `N`-particle sector onto the `n - N` sector by
/// complementing every occupation mask.
pub fn particle_hole_map(from: &FockBasis, to: &FockBasis, amplitudes: &[Complex64]) -> Result<Vec<Complex64>> {
    if from.n_sites() != to.n_sites() || from.n_particles() + to.n_particles() != from.n_sites() {
        return Err(Error::validation(
            "fock: particle-hole map",
            format!(
                "sectors ({} sites, {} particles) and ({} sites, {} particles) are not complementary",
                from.n_sites(),
                from.n_particles(),
                to.n_sites(),
                to.n_particles()
            ),
        ));
    }
    if amplitudes.len() != from.dim() {
        return Err(Error::DimensionMismatch {
            context: "fock: particle-hole map",
            expected: from.dim(),
            actual: amplitudes.len(),
        });
    }
    let full = if from.n_sites() == 64 { u64::MAX } else { (1u64 << from.n_sites()) - 1 };
    let mut out = vec![Complex64::new(0.0, 0.0); to.dim()];
    for (i, &s) in from.states().iter().enumerate() {
        let j = to.index_of(!s & full).expect("complement lies in the target sector");
        out[j] = amplitudes[i];
    }
    Ok(out)
}
