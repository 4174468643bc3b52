//! Quantum phase space of a single site: Planck cells of area `x0·k0 = 2π`,
//! one Wannier function per cell, and the expansion of the two local
//! oscillator levels `|0⟩`, `|1⟩` in that basis.
//!
//! Wannier functions come from Gaussian packets
//! `g(x) = exp[-(x - jx·x0)²/(4ζ²) + i·jk·k0·x]` made orthonormal with the
//! symmetric inverse-square-root of their Gram matrix, which is independent
//! of packet order and keeps the reflection and conjugation symmetries of
//! the cell window. All inner products use trapezoidal quadrature on a
//! uniform real-space grid.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Geometry and numerics of the per-site phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameParams {
    /// Cell length in position.
    pub x0: f64,
    /// Cell width in wavenumber; `x0·k0` must equal 2π.
    pub k0: f64,
    /// Gaussian packet width ζ.
    pub zeta: f64,
    /// Cells span `jx ∈ [-window_x, window_x]`.
    pub window_x: i32,
    /// Cells span `jk ∈ [-window_k, window_k]`.
    pub window_k: i32,
    pub dx: f64,
    /// Real grid covers `[-extent, extent]`.
    pub extent: f64,
    pub oscillator_length: f64,
    pub leakage_tolerance: f64,
}

impl Default for FrameParams {
    fn default() -> Self {
        // one oscillator length by 2π/ℓ; keeps both levels inside a 5x5
        // window (leakage < 1e-3) with cell centroids within 0.1 cell
        FrameParams {
            x0: 1.0,
            k0: 2.0 * PI,
            zeta: 0.35,
            window_x: 2,
            window_k: 2,
            dx: 0.008,
            extent: 12.0,
            oscillator_length: 1.0,
            leakage_tolerance: 1e-3,
        }
    }
}

impl FrameParams {
    /// Default geometry with a square window of half-width `w` (M = (2w+1)² cells).
    pub fn with_window(w: i32) -> Self {
        FrameParams { window_x: w, window_k: w, ..Self::default() }
    }

    pub fn n_cells(&self) -> usize {
        ((2 * self.window_x + 1) * (2 * self.window_k + 1)) as usize
    }
}

/// Uniform real-space grid plus the cell window.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    params: FrameParams,
    xs: Vec<f64>,
    weights: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(params: FrameParams) -> Result<Self> {
        let p = params;
        if !(p.x0 > 0.0 && p.k0 > 0.0 && p.zeta > 0.0 && p.dx > 0.0 && p.extent > 0.0 && p.oscillator_length > 0.0) {
            return Err(Error::validation("wannier", format!("frame parameters must be positive: {p:?}")));
        }
        if p.window_x < 0 || p.window_k < 0 {
            return Err(Error::validation("wannier", "cell windows must be non-negative"));
        }
        if (p.x0 * p.k0 - 2.0 * PI).abs() > 1e-12 {
            return Err(Error::validation("wannier", format!("x0·k0 = {} differs from 2π", p.x0 * p.k0)));
        }
        let k_max = p.window_k as f64 * p.k0;
        let limit = if k_max > 0.0 { p.zeta.min(1.0 / k_max) } else { p.zeta } / 8.0;
        if p.dx > limit + 1e-15 {
            return Err(Error::Resolution(format!("dx = {} exceeds min(ζ, 1/k_max)/8 = {limit}", p.dx)));
        }
        let needed = p.window_x as f64 * p.x0 + 6.0 * p.zeta;
        if p.extent < needed {
            return Err(Error::Resolution(format!("extent {} is below Wx·x0 + 6ζ = {needed}", p.extent)));
        }
        let intervals = (2.0 * p.extent / p.dx).round();
        if ((2.0 * p.extent / p.dx) - intervals).abs() > 1e-9 {
            return Err(Error::validation("wannier", "2·extent must be an integer multiple of dx"));
        }
        let n = intervals as usize + 1;
        let xs: Vec<f64> = (0..n).map(|i| -p.extent + i as f64 * p.dx).collect();
        let mut weights = vec![p.dx; n];
        weights[0] *= 0.5;
        weights[n - 1] *= 0.5;
        Ok(PhaseGrid { params, xs, weights })
    }

    pub fn params(&self) -> &FrameParams {
        &self.params
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Trapezoidal quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cells `(jx, jk)` with `jx` outer and `jk` inner, both ascending.
    pub fn cells(&self) -> Vec<(i32, i32)> {
        let p = &self.params;
        (-p.window_x..=p.window_x).flat_map(|jx| (-p.window_k..=p.window_k).map(move |jk| (jx, jk))).collect()
    }

    /// Quadrature inner product `⟨a|b⟩`.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| x.conj() * y * *w).sum()
    }
}

/// One L²-normalized Gaussian packet per cell, as the columns of a matrix.
pub fn build_gaussian_packets(grid: &PhaseGrid) -> Result<DMatrix<Complex64>> {
    let p = grid.params();
    let cells = grid.cells();
    let xs = grid.xs();
    let mut out = DMatrix::zeros(xs.len(), cells.len());
    let analytic = p.zeta * (2.0 * PI).sqrt();
    for (col, &(jx, jk)) in cells.iter().enumerate() {
        let centre = jx as f64 * p.x0;
        let k = jk as f64 * p.k0;
        let values: Vec<Complex64> = xs
            .iter()
            .map(|&x| Complex64::from_polar((-(x - centre).powi(2) / (4.0 * p.zeta * p.zeta)).exp(), k * x))
            .collect();
        let norm_sq = grid.inner(&values, &values).re;
        if ((norm_sq - analytic) / analytic).abs() > 1e-6 {
            return Err(Error::Resolution(format!(
                "packet ({jx}, {jk}) quadrature norm {norm_sq} deviates from {analytic}"
            )));
        }
        let scale = norm_sq.sqrt();
        for (row, v) in values.into_iter().enumerate() {
            out[(row, col)] = v / scale;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Orthonormalized {
    pub functions: DMatrix<Complex64>,
    pub min_gram_eigenvalue: f64,
}

/// Symmetric orthogonalization `W = G · S^{-1/2}` with `S` the quadrature Gram matrix.
pub fn orthogonalize(packets: &DMatrix<Complex64>, weights: &[f64]) -> Result<Orthonormalized> {
    if packets.nrows() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "wannier: orthogonalize",
            expected: weights.len(),
            actual: packets.nrows(),
        });
    }
    let mut weighted = packets.clone();
    for (r, w) in weights.iter().enumerate() {
        weighted.row_mut(r).scale_mut(*w);
    }
    let gram = packets.adjoint() * weighted;
    let gram = (&gram + gram.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(gram);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-10) {
        return Err(Error::Conditioning { min_eigenvalue: min });
    }
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (c, lambda) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / lambda.sqrt());
    }
    let inv_sqrt = scaled * u.adjoint();
    Ok(Orthonormalized { functions: packets * inv_sqrt, min_gram_eigenvalue: min })
}

/// Harmonic-oscillator eigenfunction of level 0 or 1, unit quadrature norm.
pub fn oscillator_level(grid: &PhaseGrid, level: usize, length: f64) -> Vec<Complex64> {
    let values: Vec<Complex64> = grid
        .xs()
        .iter()
        .map(|&x| {
            let u = x / length;
            let ground = (-0.5 * u * u).exp();
            let v = match level {
                0 => ground,
                1 => 2f64.sqrt() * u * ground,
                _ => panic!("only levels 0 and 1 are supported"),
            };
            Complex64::new(v, 0.0)
        })
        .collect();
    let norm = grid.inner(&values, &values).re.sqrt();
    values.into_iter().map(|v| v / norm).collect()
}

/// Expansion coefficients of the local levels in the Wannier basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelProjection {
    cells: Vec<(i32, i32)>,
    coefficients: [Vec<Complex64>; 2],
    leakage: [f64; 2],
}

impl LevelProjection {
    pub fn new(cells: Vec<(i32, i32)>, coefficients: [Vec<Complex64>; 2]) -> Result<Self> {
        if coefficients.iter().any(|c| c.len() != cells.len()) || cells.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "wannier: level projection",
                expected: cells.len(),
                actual: coefficients[0].len().min(coefficients[1].len()),
            });
        }
        let leakage = [0, 1].map(|m| 1.0 - coefficients[m].iter().map(|c| c.norm_sqr()).sum::<f64>());
        Ok(LevelProjection { cells, coefficients, leakage })
    }

    pub fn cells(&self) -> &[(i32, i32)] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Raw coefficients `C[m][i] = ⟨w_i|φ_m⟩`.
    pub fn coefficients(&self, level: usize) -> &[Complex64] {
        &self.coefficients[level]
    }

    /// `1 - Σ_i |C[m][i]|²` per level.
    pub fn leakage(&self) -> [f64; 2] {
        self.leakage
    }

    /// Coefficients rescaled to unit norm within the window.
    pub fn normalized_coefficients(&self, level: usize) -> Vec<Complex64> {
        let s = (1.0 - self.leakage[level]).sqrt();
        self.coefficients[level].iter().map(|c| c / s).collect()
    }

    /// Cell distribution `d_m(i) = |C[m][i]|²`, normalized within the window.
    pub fn cell_weights(&self, level: usize) -> Vec<f64> {
        let mass = 1.0 - self.leakage[level];
        self.coefficients[level].iter().map(|c| c.norm_sqr() / mass).collect()
    }

    pub fn cell_index(&self, cell: (i32, i32)) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }
}

/// Complete single-site frame.
#[derive(Debug, Clone)]
pub struct WannierFrame {
    grid: PhaseGrid,
    cells: Vec<(i32, i32)>,
    functions: DMatrix<Complex64>,
    projection: LevelProjection,
    min_gram_eigenvalue: f64,
}

impl WannierFrame {
    pub fn build(params: FrameParams) -> Result<Self> {
        let grid = PhaseGrid::new(params)?;
        let packets = build_gaussian_packets(&grid)?;
        let ortho = orthogonalize(&packets, grid.weights())?;
        let cells = grid.cells();
        let projection = project_levels(&grid, &cells, &ortho.functions, params.oscillator_length)?;
        for (level, &leak) in projection.leakage().iter().enumerate() {
            if leak > params.leakage_tolerance {
                return Err(Error::WindowTooSmall { level, leakage: leak, tolerance: params.leakage_tolerance });
            }
        }
        Ok(WannierFrame { grid, cells, functions: ortho.functions, projection, min_gram_eigenvalue: ortho.min_gram_eigenvalue })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn params(&self) -> &FrameParams {
        self.grid.params()
    }

    pub fn cells(&self) -> &[(i32, i32)] {
        &self.cells
    }

    /// Wannier functions sampled on the grid, one per column.
    pub fn functions(&self) -> &DMatrix<Complex64> {
        &self.functions
    }

    pub fn function(&self, cell: (i32, i32)) -> Option<Vec<Complex64>> {
        let idx = self.cells.iter().position(|&c| c == cell)?;
        Some(self.functions.column(idx).iter().copied().collect())
    }

    pub fn projection(&self) -> &LevelProjection {
        &self.projection
    }

    pub fn min_gram_eigenvalue(&self) -> f64 {
        self.min_gram_eigenvalue
    }

    /// `max |⟨w_i|w_j⟩ - δ_ij|`.
    pub fn gram_deviation(&self) -> f64 {
        let mut weighted = self.functions.clone();
        for (r, w) in self.grid.weights().iter().enumerate() {
            weighted.row_mut(r).scale_mut(*w);
        }
        let gram = self.functions.adjoint() * weighted;
        let m = gram.nrows();
        (gram - DMatrix::<Complex64>::identity(m, m)).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Text export: `#`-prefixed header then `m jx jk re im` rows.
    pub fn export(&self) -> String {
        export_projection(self.params(), &self.projection)
    }

    /// First 16 hex digits of the SHA-256 of [`WannierFrame::export`].
    pub fn hash(&self) -> String {
        frame_hash(&self.export())
    }
}

/// `C[m][i] = ⟨w_i|φ_m⟩` for both oscillator levels.
pub fn project_levels(
    grid: &PhaseGrid,
    cells: &[(i32, i32)],
    functions: &DMatrix<Complex64>,
    oscillator_length: f64,
) -> Result<LevelProjection> {
    if functions.ncols() != cells.len() || functions.nrows() != grid.xs().len() {
        return Err(Error::DimensionMismatch {
            context: "wannier: project_levels",
            expected: cells.len(),
            actual: functions.ncols(),
        });
    }
    let coefficients = [0, 1].map(|level| {
        let phi = oscillator_level(grid, level, oscillator_length);
        (0..cells.len())
            .map(|i| {
                let col: Vec<Complex64> = functions.column(i).iter().copied().collect();
                grid.inner(&col, &phi)
            })
            .collect::<Vec<_>>()
    });
    let [c0, c1] = coefficients;
    LevelProjection::new(cells.to_vec(), [symmetrize(cells, c0, 1.0), symmetrize(cells, c1, -1.0)])
}

/// Averages each coefficient over its orbit under x → -x (cell (jx, jk) →
/// (-jx, -jk), factor `parity`) and complex conjugation ((jx, jk) →
/// (jx, -jk)), both exact symmetries of a real level on a centred grid.
/// Quadrature round-off otherwise breaks the orbit equalities at ~1e-11.
/// Windows not closed under both maps are returned unchanged.
fn symmetrize(cells: &[(i32, i32)], c: Vec<Complex64>, parity: f64) -> Vec<Complex64> {
    let index = |cell: (i32, i32)| cells.iter().position(|&x| x == cell);
    let mut orbits = Vec::with_capacity(cells.len());
    for &(jx, jk) in cells {
        match (index((-jx, -jk)), index((jx, -jk)), index((-jx, jk))) {
            (Some(r), Some(k), Some(rk)) => orbits.push((r, k, rk)),
            _ => return c,
        }
    }
    let mut out = c.clone();
    let mut done = vec![false; cells.len()];
    for i in 0..cells.len() {
        if done[i] {
            continue;
        }
        let (r, k, rk) = orbits[i];
        let v = (c[i] + c[r] * parity + c[k].conj() + c[rk].conj() * parity) / 4.0;
        for (j, value) in [(i, v), (r, v * parity), (k, v.conj()), (rk, v.conj() * parity)] {
            out[j] = value;
            done[j] = true;
        }
    }
    out
}

pub fn frame_hash(export: &str) -> String {
    let digest = Sha256::digest(export.as_bytes());
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn export_projection(p: &FrameParams, proj: &LevelProjection) -> String {
    let mut out = String::new();
    let leak = proj.leakage();
    let _ = writeln!(out, "# x0 = {:e}", p.x0);
    let _ = writeln!(out, "# k0 = {:e}", p.k0);
    let _ = writeln!(out, "# zeta = {:e}", p.zeta);
    let _ = writeln!(out, "# window_x = {}", p.window_x);
    let _ = writeln!(out, "# window_k = {}", p.window_k);
    let _ = writeln!(out, "# dx = {:e}", p.dx);
    let _ = writeln!(out, "# extent = {:e}", p.extent);
    let _ = writeln!(out, "# oscillator_length = {:e}", p.oscillator_length);
    let _ = writeln!(out, "# leakage0 = {:e}", leak[0]);
    let _ = writeln!(out, "# leakage1 = {:e}", leak[1]);
    out.push_str("m jx jk re im\n");
    for level in 0..2 {
        for (&(jx, jk), c) in proj.cells().iter().zip(proj.coefficients(level)) {
            let _ = writeln!(out, "{level} {jx} {jk} {:e} {:e}", c.re, c.im);
        }
    }
    out
}

/// Parses an export back into frame parameters and coefficients. Floats are
/// written in shortest round-trip form, so the result is bit-identical.
pub fn parse_export(text: &str) -> Result<(FrameParams, LevelProjection)> {
    let mut params = FrameParams::default();
    let mut rows: [Vec<((i32, i32), Complex64)>; 2] = [Vec::new(), Vec::new()];
    let bad = |line: &str| Error::Parse(format!("frame export: malformed line '{line}'"));
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(header) = line.strip_prefix('#') {
            let Some((key, value)) = header.split_once('=') else { continue };
            let value = value.trim();
            let f = || value.parse::<f64>().map_err(|_| bad(line));
            let i = || value.parse::<i32>().map_err(|_| bad(line));
            match key.trim() {
                "x0" => params.x0 = f()?,
                "k0" => params.k0 = f()?,
                "zeta" => params.zeta = f()?,
                "window_x" => params.window_x = i()?,
                "window_k" => params.window_k = i()?,
                "dx" => params.dx = f()?,
                "extent" => params.extent = f()?,
                "oscillator_length" => params.oscillator_length = f()?,
                _ => {}
            }
            continue;
        }
        if line.starts_with('m') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad(line));
        }
        let level: usize = fields[0].parse().map_err(|_| bad(line))?;
        let jx: i32 = fields[1].parse().map_err(|_| bad(line))?;
        let jk: i32 = fields[2].parse().map_err(|_| bad(line))?;
        let re: f64 = fields[3].parse().map_err(|_| bad(line))?;
        let im: f64 = fields[4].parse().map_err(|_| bad(line))?;
        if level > 1 {
            return Err(bad(line));
        }
        rows[level].push(((jx, jk), Complex64::new(re, im)));
    }
    let cells: Vec<(i32, i32)> = rows[0].iter().map(|r| r.0).collect();
    if rows[1].iter().map(|r| r.0).collect::<Vec<_>>() != cells {
        return Err(Error::Parse("frame export: level rows list different cells".into()));
    }
    let coefficients = [0, 1].map(|m| rows[m].iter().map(|r| r.1).collect::<Vec<_>>());
    Ok((params, LevelProjection::new(cells, coefficients)?))
}

/// Per-cell moments of the macro position and momentum operators.
#[derive(Debug, Clone)]
pub struct MacroDiagnostics {
    pub order: u32,
    pub cells: Vec<(i32, i32)>,
    pub mean_q: Vec<f64>,
    pub mean_p: Vec<f64>,
    /// `⟨(q - ⟨q⟩)^i⟩^{1/i}` (signed root for odd orders).
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
    pub q_matrix: DMatrix<f64>,
    pub p_matrix: DMatrix<f64>,
}

impl MacroDiagnostics {
    /// `QP - PQ`.
    pub fn commutator(&self) -> DMatrix<f64> {
        &self.q_matrix * &self.p_matrix - &self.p_matrix * &self.q_matrix
    }
}

fn signed_root(v: f64, order: u32) -> f64 {
    v.signum() * v.abs().powf(1.0 / order as f64)
}

/// Wavenumber of each FFT bin for `n` samples at spacing `dx`.
fn fft_wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
            2.0 * PI * m / (n as f64 * dx)
        })
        .collect()
}

/// Spread of each Wannier function around its macro position and momentum.
pub fn macro_spreads(frame: &WannierFrame, order: u32) -> Result<MacroDiagnostics> {
    if order < 2 {
        return Err(Error::validation("wannier: macro_spreads", format!("order must be at least 2, got {order}")));
    }
    let p = frame.params();
    let nyquist = PI / p.dx;
    let k_reach = p.window_k as f64 * p.k0 + 6.0 / (2.0 * p.zeta);
    if k_reach >= nyquist {
        return Err(Error::Resolution(format!("wavenumber reach {k_reach} exceeds grid Nyquist {nyquist}")));
    }
    let xs = frame.grid().xs();
    let weights = frame.grid().weights();
    let n = xs.len();
    let ks = fft_wavenumbers(n, p.dx);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let m = frame.cells().len();
    let (mut mean_q, mut mean_p, mut dq, mut dp) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for j in 0..m {
        let w: Vec<Complex64> = frame.functions().column(j).iter().copied().collect();
        let density: Vec<f64> = w.iter().zip(weights).map(|(a, wt)| a.norm_sqr() * wt).collect();
        let mass: f64 = density.iter().sum();
        let q: f64 = density.iter().zip(xs).map(|(d, x)| d * x).sum::<f64>() / mass;
        let q_moment: f64 = density.iter().zip(xs).map(|(d, x)| d * (x - q).powi(order as i32)).sum::<f64>() / mass;

        let mut spectrum = w.clone();
        fft.process(&mut spectrum);
        let power: Vec<f64> = spectrum.iter().map(|z| z.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        let k_mean: f64 = power.iter().zip(&ks).map(|(pw, k)| pw * k).sum::<f64>() / total;
        let k_moment: f64 = power.iter().zip(&ks).map(|(pw, k)| pw * (k - k_mean).powi(order as i32)).sum::<f64>() / total;

        mean_q[j] = q;
        mean_p[j] = k_mean;
        dq[j] = signed_root(q_moment, order);
        dp[j] = signed_root(k_moment, order);
    }
    let q_matrix = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(mean_q.clone()));
    let p_matrix = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(mean_p.clone()));
    Ok(MacroDiagnostics { order, cells: frame.cells().to_vec(), mean_q, mean_p, dq, dp, q_matrix, p_matrix })
}
