//! Lattice graphs whose nearest-neighbour pairs define the Hamiltonian sums.
//!
//! Chains and grids use open boundaries, rings are periodic. Sites are
//! 0-based; grid sites are numbered row-major (`row * cols + col`).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest lattice representable with 64-bit occupation masks.
pub const MAX_SITES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Chain,
    Ring,
    Grid { rows: usize, cols: usize },
    Custom,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Chain => write!(f, "chain"),
            Shape::Ring => write!(f, "ring"),
            Shape::Grid { rows, cols } => write!(f, "grid{rows}x{cols}"),
            Shape::Custom => write!(f, "custom"),
        }
    }
}

/// Undirected, connected, simple graph with a canonical edge list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeGraph {
    n_sites: usize,
    edges: Vec<(usize, usize)>,
    shape: Shape,
}

impl LatticeGraph {
    pub fn chain(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("chain needs at least 2 sites, got {n}")));
        }
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        Self::from_parts(n, edges, Shape::Chain)
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSize(format!("ring needs at least 3 sites, got {n}")));
        }
        let mut edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        edges.push((0, n - 1));
        Self::from_parts(n, edges, Shape::Ring)
    }

    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(Error::InvalidSize(format!("grid {rows}x{cols} has fewer than 2 sites")));
        }
        let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
        for r in 0..rows {
            for c in 0..cols {
                let site = r * cols + c;
                if c + 1 < cols {
                    edges.push((site, site + 1));
                }
                if r + 1 < rows {
                    edges.push((site, site + cols));
                }
            }
        }
        Self::from_parts(rows * cols, edges, Shape::Grid { rows, cols })
    }

    /// Builds a graph from an arbitrary pair list. Pairs are normalized to
    /// `i < j` and deduplicated.
    pub fn custom(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidSize("custom lattice needs at least 1 site".into()));
        }
        Self::from_parts(n, pairs.to_vec(), Shape::Custom)
    }

    fn from_parts(n: usize, pairs: Vec<(usize, usize)>, shape: Shape) -> Result<Self> {
        if n > MAX_SITES {
            return Err(Error::InvalidSize(format!("{n} sites exceeds the maximum of {MAX_SITES}")));
        }
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::validation(
                    "lattice",
                    format!("edge ({a}, {b}) references a site outside 0..{n}"),
                ));
            }
            if a == b {
                return Err(Error::validation("lattice", format!("self-loop at site {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let graph = LatticeGraph { n_sites: n, edges: set.into_iter().collect(), shape };
        let components = graph.component_count();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(graph)
    }

    fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_sites).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.n_sites;
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                components -= 1;
            }
        }
        components
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Edges `(i, j)` with `i < j`, ascending lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn degree(&self, site: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == site || b == site).count()
    }

    /// Plain-text record: `n_sites` on the first line, then one `i j` line per edge.
    pub fn to_record(&self) -> String {
        let mut out = format!("{}\n", self.n_sites);
        for (a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    /// Parses a record produced by [`LatticeGraph::to_record`]; the result
    /// is tagged as a custom shape.
    pub fn from_record(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty lattice record".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("site count: {e}")))?;
        let mut pairs = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize> {
                it.next()
                    .ok_or_else(|| Error::Parse(format!("malformed edge line '{line}'")))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("edge line '{line}': {e}")))
            };
            pairs.push((next()?, next()?));
        }
        Self::custom(n, &pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_grid_edges(rows: usize, cols: usize) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for a in 0..rows * cols {
            for b in a + 1..rows * cols {
                let (ra, ca) = ((a / cols) as i64, (a % cols) as i64);
                let (rb, cb) = ((b / cols) as i64, (b % cols) as i64);
                if (ra - rb).abs() + (ca - cb).abs() == 1 {
                    out.insert((a, b));
                }
            }
        }
        out
    }

    #[test]
    fn chain_edges() {
        assert_eq!(LatticeGraph::chain(3).unwrap().edges(), &[(0, 1), (1, 2)]);
        assert_eq!(LatticeGraph::chain(2).unwrap().edges(), &[(0, 1)]);
        assert_eq!(LatticeGraph::chain(16).unwrap().edges().len(), 15);
        assert!(matches!(LatticeGraph::chain(1), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn ring_edges() {
        assert_eq!(LatticeGraph::ring(3).unwrap().edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(LatticeGraph::ring(5).unwrap().edges().len(), 5);
        assert_eq!(LatticeGraph::ring(16).unwrap().edges().len(), 16);
        assert!(LatticeGraph::ring(2).is_err());
    }

    #[test]
    fn grid_matches_neighbour_enumeration() {
        for (r, c) in [(4, 4), (2, 3), (3, 5), (1, 7)] {
            let g = LatticeGraph::grid(r, c).unwrap();
            let expected: Vec<_> = brute_force_grid_edges(r, c).into_iter().collect();
            assert_eq!(g.edges(), expected.as_slice());
            assert_eq!(g.edges().len(), r * (c - 1) + c * (r - 1));
        }
        let g = LatticeGraph::grid(4, 4).unwrap();
        assert_eq!(g.n_sites(), 16);
        assert_eq!(g.edges().len(), 24);
        // first site of the 4x4 lattice touches the second and the fifth
        let nbrs: Vec<_> = g.edges().iter().filter(|e| e.0 == 0).map(|e| e.1).collect();
        assert_eq!(nbrs, vec![1, 4]);
        assert!(LatticeGraph::grid(1, 1).is_err());
    }

    #[test]
    fn degenerate_grid_is_chain() {
        for n in 2..10 {
            assert_eq!(LatticeGraph::grid(1, n).unwrap().edges(), LatticeGraph::chain(n).unwrap().edges());
        }
    }

    #[test]
    fn degrees() {
        let c = LatticeGraph::chain(6).unwrap();
        assert_eq!(c.degree(0), 1);
        assert_eq!(c.degree(5), 1);
        assert!((1..5).all(|s| c.degree(s) == 2));
        let r = LatticeGraph::ring(7).unwrap();
        assert!((0..7).all(|s| r.degree(s) == 2));
        let g = LatticeGraph::grid(4, 4).unwrap();
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.degree(1), 3);
        assert_eq!(g.degree(5), 4);
        assert_eq!(g.degree(10), 4);
    }

    #[test]
    fn custom_graphs() {
        let tri = LatticeGraph::custom(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(tri.edges(), LatticeGraph::ring(3).unwrap().edges());
        assert!(matches!(
            LatticeGraph::custom(4, &[(0, 1), (2, 3)]),
            Err(Error::Disconnected { components: 2 })
        ));
        assert_eq!(LatticeGraph::custom(2, &[(1, 0), (0, 1)]).unwrap().edges(), &[(0, 1)]);
        assert!(matches!(LatticeGraph::custom(3, &[(0, 3)]), Err(Error::Validation { .. })));
    }

    #[test]
    fn record_round_trip() {
        let g = LatticeGraph::grid(3, 3).unwrap();
        let text = g.to_record();
        assert!(text.starts_with("9\n0 1\n0 3\n"));
        let back = LatticeGraph::from_record(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
    }

    proptest::proptest! {
        #[test]
        fn permuted_input_gives_identical_record(seed in 0u64..1000) {
            let base = LatticeGraph::grid(3, 4).unwrap();
            let mut pairs: Vec<_> = base.edges().iter().map(|&(a, b)| if seed % 2 == 0 { (b, a) } else { (a, b) }).collect();
            // deterministic shuffle
            let len = pairs.len();
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            for i in (1..len).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                pairs.swap(i, (state >> 33) as usize % (i + 1));
            }
            let rebuilt = LatticeGraph::custom(12, &pairs).unwrap();
            proptest::prop_assert_eq!(rebuilt.to_record(), base.to_record());
        }
    }
}
