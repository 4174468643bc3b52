//! F entropy over the Fock basis and W entropy over joint phase cells.
//!
//! Every site carries the same single-site frame, so a joint cell is a tuple
//! `(i_1, .., i_n)` of per-site cell indices. The factorized probability
//! mixes product distributions of the occupied/empty level weights; the
//! exact variant sums complex amplitudes before squaring.
//!
//! Both are evaluated by a depth-first walk over sites. Fock states that
//! agree on the not-yet-visited sites are merged at each depth, which keeps
//! the per-node work at `min(dim, 2^(remaining sites))`. Branches whose
//! total mass falls below the prune threshold are dropped and accounted for.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::QuantumState;
use crate::error::{Error, Result};
use crate::fock::FockBasis;
use crate::wannier::{LevelProjection, WannierFrame};

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1e-14;
pub const DEFAULT_COST_BUDGET: f64 = 1e10;

/// `-Σ p ln p` in nats, with `0 ln 0 = 0`.
pub fn shannon(p: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    let mut s = 0.0;
    for (i, &x) in p.iter().enumerate() {
        if x < -1e-12 || !x.is_finite() {
            return Err(Error::InvalidProbability(format!("entry {i} is {x}")));
        }
        total += x;
        if x > 0.0 {
            s -= x * x.ln();
        }
    }
    if total > 1.0 + 1e-9 {
        return Err(Error::InvalidProbability(format!("total mass {total} exceeds 1")));
    }
    Ok(s)
}

pub fn f_entropy(state: &QuantumState) -> Result<f64> {
    shannon(&state.probabilities())
}

/// W entropy of a density operator from its diagonal in the cell basis.
pub fn w_entropy_mixed(cell_diagonal: &[f64]) -> Result<f64> {
    shannon(cell_diagonal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WMethod {
    #[default]
    Factorized,
    Exact,
}

impl std::fmt::Display for WMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WMethod::Factorized => "factorized",
            WMethod::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WOptions {
    pub method: WMethod,
    pub prune_threshold: f64,
    /// Upper limit on the unpruned node-work estimate.
    pub cost_budget: f64,
}

impl Default for WOptions {
    fn default() -> Self {
        WOptions { method: WMethod::Factorized, prune_threshold: DEFAULT_PRUNE_THRESHOLD, cost_budget: DEFAULT_COST_BUDGET }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WEntropy {
    pub value: f64,
    /// Probability mass of all pruned cell tuples.
    pub dropped_mass: f64,
    /// Upper bound on `exact - value`: `δ (n ln M - ln δ)`.
    pub error_bound: f64,
}

fn error_bound(dropped: f64, n_sites: usize, n_cells: usize) -> f64 {
    if dropped <= 0.0 {
        0.0
    } else {
        dropped * (n_sites as f64 * (n_cells as f64).ln() - dropped.ln())
    }
}

/// Fock states merged by their occupation of sites `k..n`.
#[derive(Debug, Clone)]
struct Level {
    /// Occupation of site `k` per merged pattern.
    bit: Vec<u8>,
    /// Index of the pattern at depth `k + 1`.
    child: Vec<usize>,
}

fn pattern_levels(basis: &FockBasis) -> Vec<Level> {
    let n = basis.n_sites();
    let mut patterns: Vec<u64> = basis.states().to_vec();
    let mut levels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut next: Vec<u64> = patterns.iter().map(|p| p >> 1).collect();
        next.sort_unstable();
        next.dedup();
        let child = patterns.iter().map(|p| next.binary_search(&(p >> 1)).expect("child pattern")).collect();
        let bit = patterns.iter().map(|p| (p & 1) as u8).collect();
        levels.push(Level { bit, child });
        patterns = next;
    }
    levels
}

/// Cells with identical `(d_0, d_1)` merged into one class.
#[derive(Debug, Clone)]
struct CellClass {
    weight: [f64; 2],
    multiplicity: f64,
}

fn cell_classes(projection: &LevelProjection) -> Vec<CellClass> {
    let d = [projection.cell_weights(0), projection.cell_weights(1)];
    let mut classes: Vec<CellClass> = Vec::new();
    for i in 0..projection.n_cells() {
        let w = [d[0][i], d[1][i]];
        match classes.iter_mut().find(|c| c.weight == w) {
            Some(c) => c.multiplicity += 1.0,
            None => classes.push(CellClass { weight: w, multiplicity: 1.0 }),
        }
    }
    // heavy cells first so that pruned branches are visited late
    classes.sort_by(|a, b| (b.weight[0] + b.weight[1]).total_cmp(&(a.weight[0] + a.weight[1])));
    classes
}

/// Reusable W-entropy evaluator for one basis and one frame.
#[derive(Debug, Clone)]
pub struct WEntropyEngine {
    options: WOptions,
    n_sites: usize,
    dim: usize,
    n_cells: usize,
    levels: Vec<Level>,
    classes: Vec<CellClass>,
    coefficients: [Vec<Complex64>; 2],
    /// `Π_{j ≥ k} G[bit_j(p)][bit_j(q)]` per depth, for exact subtree masses.
    gram_products: Vec<Vec<Complex64>>,
    cost: f64,
}

impl WEntropyEngine {
    pub fn new(basis: &FockBasis, projection: &LevelProjection, options: WOptions) -> Result<Self> {
        if !(options.prune_threshold >= 0.0) {
            return Err(Error::validation("entropy", format!("prune threshold {} is negative", options.prune_threshold)));
        }
        let n = basis.n_sites();
        let levels = pattern_levels(basis);
        let classes = cell_classes(projection);
        let coefficients = [projection.normalized_coefficients(0), projection.normalized_coefficients(1)];
        let branching = match options.method {
            WMethod::Factorized => classes.len(),
            WMethod::Exact => projection.n_cells(),
        } as f64;
        let mut cost = 0.0;
        let mut nodes = 1.0;
        for level in &levels {
            nodes *= branching;
            cost += nodes * level.bit.len() as f64;
        }
        if cost > options.cost_budget {
            return Err(Error::EnumerationCost { cost, budget: options.cost_budget });
        }
        let gram_products = match options.method {
            WMethod::Factorized => Vec::new(),
            WMethod::Exact => gram_products(&levels, &coefficients),
        };
        Ok(WEntropyEngine {
            options,
            n_sites: n,
            dim: basis.dim(),
            n_cells: projection.n_cells(),
            levels,
            classes,
            coefficients,
            gram_products,
            cost,
        })
    }

    pub fn options(&self) -> &WOptions {
        &self.options
    }

    /// Unpruned node-work estimate checked against the budget.
    pub fn projected_cost(&self) -> f64 {
        self.cost
    }

    pub fn evaluate(&self, state: &QuantumState) -> Result<WEntropy> {
        if state.dim() != self.dim || state.basis().n_sites() != self.n_sites {
            return Err(Error::DimensionMismatch { context: "entropy", expected: self.dim, actual: state.dim() });
        }
        let mut acc = Accumulator::default();
        match self.options.method {
            WMethod::Factorized => {
                let mut bufs: Vec<Vec<f64>> = self.levels.iter().map(|l| vec![0.0; l.bit.len()]).collect();
                bufs.push(vec![0.0; 1]);
                bufs[0].copy_from_slice(&state.probabilities());
                self.walk_factorized(0, 1.0, &mut bufs, &mut acc);
            }
            WMethod::Exact => {
                let mut bufs: Vec<Vec<Complex64>> =
                    self.levels.iter().map(|l| vec![Complex64::default(); l.bit.len()]).collect();
                bufs.push(vec![Complex64::default(); 1]);
                bufs[0].copy_from_slice(state.amplitudes());
                self.walk_exact(0, &mut bufs, &mut acc);
            }
        }
        Ok(WEntropy {
            value: acc.entropy,
            dropped_mass: acc.dropped,
            error_bound: error_bound(acc.dropped, self.n_sites, self.n_cells),
        })
    }

    fn walk_factorized(&self, k: usize, multiplicity: f64, bufs: &mut [Vec<f64>], acc: &mut Accumulator) {
        let level = &self.levels[k];
        for class in &self.classes {
            let (head, tail) = bufs.split_at_mut(k + 1);
            let next = &mut tail[0];
            next.iter_mut().for_each(|x| *x = 0.0);
            for (p, &w) in head[k].iter().enumerate() {
                if w != 0.0 {
                    next[level.child[p]] += w * class.weight[level.bit[p] as usize];
                }
            }
            let mult = multiplicity * class.multiplicity;
            let mass = mult * next.iter().sum::<f64>();
            if mass < self.options.prune_threshold {
                acc.dropped += mass;
            } else if k + 1 == self.n_sites {
                let p = next[0];
                if p > 0.0 {
                    acc.entropy -= mult * p * p.ln();
                }
            } else {
                self.walk_factorized(k + 1, mult, bufs, acc);
            }
        }
    }

    fn walk_exact(&self, k: usize, bufs: &mut [Vec<Complex64>], acc: &mut Accumulator) {
        let level = &self.levels[k];
        for i in 0..self.n_cells {
            let c = [self.coefficients[0][i], self.coefficients[1][i]];
            let (head, tail) = bufs.split_at_mut(k + 1);
            let next = &mut tail[0];
            next.iter_mut().for_each(|x| *x = Complex64::default());
            for (p, &a) in head[k].iter().enumerate() {
                if a != Complex64::default() {
                    next[level.child[p]] += a * c[level.bit[p] as usize];
                }
            }
            let mass = if k + 1 == self.n_sites { next[0].norm_sqr() } else { subtree_mass(next, &self.gram_products[k + 1]) };
            if mass < self.options.prune_threshold {
                acc.dropped += mass.max(0.0);
            } else if k + 1 == self.n_sites {
                if mass > 0.0 {
                    acc.entropy -= mass * mass.ln();
                }
            } else {
                self.walk_exact(k + 1, bufs, acc);
            }
        }
    }
}

#[derive(Default)]
struct Accumulator {
    entropy: f64,
    dropped: f64,
}

fn gram_products(levels: &[Level], coefficients: &[Vec<Complex64>; 2]) -> Vec<Vec<Complex64>> {
    let mut gram = [[Complex64::default(); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            gram[a][b] = coefficients[a].iter().zip(&coefficients[b]).map(|(x, y)| x.conj() * y).sum();
        }
    }
    let n = levels.len();
    // depth n has a single empty pattern
    let mut out = vec![Vec::new(); n + 1];
    out[n] = vec![Complex64::new(1.0, 0.0)];
    for k in (0..n).rev() {
        let l = &levels[k];
        let size = l.bit.len();
        let below = &out[k + 1];
        let below_size = if k + 1 == n { 1 } else { levels[k + 1].bit.len() };
        let mut m = vec![Complex64::default(); size * size];
        for p in 0..size {
            for q in 0..size {
                m[p * size + q] =
                    gram[l.bit[p] as usize][l.bit[q] as usize] * below[l.child[p] * below_size + l.child[q]];
            }
        }
        out[k] = m;
    }
    out
}

/// `Σ_{p,q} conj(a_p) a_q K[p][q]`: the total probability below a node.
fn subtree_mass(a: &[Complex64], k: &[Complex64]) -> f64 {
    let n = a.len();
    let mut s = Complex64::default();
    for p in 0..n {
        if a[p] == Complex64::default() {
            continue;
        }
        let mut row = Complex64::default();
        for q in 0..n {
            row += k[p * n + q] * a[q];
        }
        s += a[p].conj() * row;
    }
    s.re
}

pub fn w_entropy_factorized(state: &QuantumState, frame: &WannierFrame, prune_threshold: f64) -> Result<WEntropy> {
    let options = WOptions { method: WMethod::Factorized, prune_threshold, ..WOptions::default() };
    WEntropyEngine::new(state.basis(), frame.projection(), options)?.evaluate(state)
}

pub fn w_entropy_exact(state: &QuantumState, frame: &WannierFrame, prune_threshold: f64) -> Result<WEntropy> {
    let options = WOptions { method: WMethod::Exact, prune_threshold, ..WOptions::default() };
    WEntropyEngine::new(state.basis(), frame.projection(), options)?.evaluate(state)
}

/// `[H(d_0), H(d_1)]`: single-site W entropy of an empty and an occupied site.
pub fn level_entropies(projection: &LevelProjection) -> Result<[f64; 2]> {
    Ok([shannon(&projection.cell_weights(0))?, shannon(&projection.cell_weights(1))?])
}

/// Factorized W entropy of a Fock basis state, by additivity over sites.
pub fn fock_w_entropy(mask: u64, n_sites: usize, projection: &LevelProjection) -> Result<f64> {
    let [h0, h1] = level_entropies(projection)?;
    let occupied = (mask & low_bits(n_sites)).count_ones() as f64;
    Ok(occupied * h1 + (n_sites as f64 - occupied) * h0)
}

fn low_bits(n: usize) -> u64 {
    if n >= 64 { u64::MAX } else { (1u64 << n) - 1 }
}

/// Mean factorized W entropy over all states of the basis.
pub fn mean_fock_w_entropy(basis: &FockBasis, frame: &WannierFrame) -> Result<f64> {
    let mut total = 0.0;
    for &mask in basis.states() {
        total += fock_w_entropy(mask, basis.n_sites(), frame.projection())?;
    }
    Ok(total / basis.dim() as f64)
}

/// All `M^n` exact cell probabilities `|⟨w_{i_1} ⊗ .. ⊗ w_{i_n}|ψ⟩|²`,
/// tuples ordered with site 0 varying slowest.
pub fn exact_cell_probabilities(state: &QuantumState, projection: &LevelProjection, budget: f64) -> Result<Vec<f64>> {
    let n = state.basis().n_sites();
    let m = projection.n_cells();
    let total = (m as f64).powi(n as i32);
    if total * state.dim() as f64 > budget {
        return Err(Error::EnumerationCost { cost: total * state.dim() as f64, budget });
    }
    let c = [projection.normalized_coefficients(0), projection.normalized_coefficients(1)];
    let mut out = Vec::with_capacity(total as usize);
    let mut tuple = vec![0usize; n];
    for _ in 0..total as usize {
        let mut a = Complex64::default();
        for (&mask, &lambda) in state.basis().states().iter().zip(state.amplitudes()) {
            let mut term = lambda;
            for (site, &cell) in tuple.iter().enumerate() {
                term *= c[((mask >> site) & 1) as usize][cell];
            }
            a += term;
        }
        out.push(a.norm_sqr());
        for site in (0..n).rev() {
            tuple[site] += 1;
            if tuple[site] < m {
                break;
            }
            tuple[site] = 0;
        }
    }
    Ok(out)
}

/// Entropy time series of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub n_sites: usize,
    pub n_particles: usize,
    pub shape: String,
    pub hopping: f64,
    pub interaction: f64,
    pub init_sites: Vec<usize>,
    pub frame: Option<String>,
    pub window: Option<i32>,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WColumns {
    pub s_w: Vec<f64>,
    pub dropped_mass: Vec<f64>,
    pub error_bound: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTrace {
    pub meta: TraceMeta,
    pub times: Vec<f64>,
    pub s_f: Vec<f64>,
    pub w: Option<WColumns>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Column {
    #[serde(rename = "s_f")]
    SF,
    #[serde(rename = "s_w")]
    SW,
}

impl std::fmt::Display for Column {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Column::SF => "s_f",
            Column::SW => "s_w",
        })
    }
}

const TRACE_COLUMNS: &str = "t,s_f,s_w,dropped_mass,error_bound";

impl EntropyTrace {
    pub fn new(meta: TraceMeta, times: Vec<f64>, s_f: Vec<f64>, w: Option<WColumns>) -> Result<Self> {
        let trace = EntropyTrace { meta, times, s_f, w };
        trace.validate()?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, column: Column) -> Option<&[f64]> {
        match column {
            Column::SF => Some(&self.s_f),
            Column::SW => self.w.as_ref().map(|w| w.s_w.as_slice()),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.times.len();
        let mismatch = |actual| Err(Error::DimensionMismatch { context: "entropy: trace", expected: n, actual });
        if self.s_f.len() != n {
            return mismatch(self.s_f.len());
        }
        if let Some(w) = &self.w {
            for len in [w.s_w.len(), w.dropped_mass.len(), w.error_bound.len()] {
                if len != n {
                    return mismatch(len);
                }
            }
            if let Some(i) = w.s_w.iter().position(|&s| !(s >= -1e-12)) {
                return Err(Error::validation("entropy: trace", format!("s_w[{i}] = {} is negative", w.s_w[i])));
            }
        }
        if self.times.windows(2).any(|t| !(t[1] > t[0])) {
            return Err(Error::validation("entropy: trace", "times are not strictly ascending"));
        }
        let max = ln_binomial(self.meta.n_sites, self.meta.n_particles) + 1e-9;
        if let Some(i) = self.s_f.iter().position(|&s| !(-1e-12..=max).contains(&s)) {
            return Err(Error::validation("entropy: trace", format!("s_f[{i}] = {} outside [0, ln dim]", self.s_f[i])));
        }
        Ok(())
    }

    pub fn header(&self) -> String {
        let m = &self.meta;
        let init: Vec<String> = m.init_sites.iter().map(|s| s.to_string()).collect();
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "# n={},N={},shape={},J={},U={},init={},frame={},window={},theta={}",
            m.n_sites,
            m.n_particles,
            m.shape,
            m.hopping,
            m.interaction,
            init.join(";"),
            opt(m.frame.clone()),
            opt(m.window.map(|w| w.to_string())),
            opt(m.theta.map(|t| format!("{t:e}"))),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header());
        out.push('\n');
        out.push_str(TRACE_COLUMNS);
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{},{}", self.times[i], self.s_f[i]);
            match &self.w {
                Some(w) => {
                    let _ = writeln!(out, ",{},{},{}", w.s_w[i], w.dropped_mass[i], w.error_bound[i]);
                }
                None => out.push_str(",,,\n"),
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty trace file".into()))?;
        let meta = parse_header(header)?;
        let columns = lines.next().ok_or_else(|| Error::Parse("trace: missing column header".into()))?;
        let names: Vec<&str> = columns.split(',').map(str::trim).collect();
        let expected: Vec<&str> = TRACE_COLUMNS.split(',').collect();
        for (i, want) in expected.iter().enumerate() {
            match names.get(i) {
                Some(got) if got == want => {}
                Some(got) => return Err(Error::Parse(format!("trace: column {} is '{got}', expected '{want}'", i + 1))),
                None => return Err(Error::Parse(format!("trace: missing column '{want}'"))),
            }
        }
        let (mut times, mut s_f) = (Vec::new(), Vec::new());
        let mut w = [Vec::new(), Vec::new(), Vec::new()];
        let mut has_w = None;
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected.len() {
                return Err(Error::Parse(format!("trace: row {} has {} fields, expected {}", row + 1, fields.len(), expected.len())));
            }
            let parse = |col: usize| -> Result<f64> {
                fields[col].trim().parse().map_err(|e| {
                    Error::Parse(format!("trace: column '{}' row {}: '{}': {e}", expected[col], row + 1, fields[col]))
                })
            };
            times.push(parse(0)?);
            s_f.push(parse(1)?);
            let present = !fields[2].trim().is_empty();
            if *has_w.get_or_insert(present) != present {
                return Err(Error::Parse(format!("trace: column 's_w' is empty on some rows only (row {})", row + 1)));
            }
            if present {
                for (j, col) in w.iter_mut().enumerate() {
                    col.push(parse(2 + j)?);
                }
            }
        }
        let w = if has_w == Some(true) {
            let [s_w, dropped_mass, error_bound] = w;
            Some(WColumns { s_w, dropped_mass, error_bound })
        } else {
            None
        };
        Self::new(meta, times, s_f, w)
    }
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    (0..k.min(n)).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

fn parse_header(line: &str) -> Result<TraceMeta> {
    let body = line.strip_prefix('#').ok_or_else(|| Error::Parse("trace: missing '#' metadata header".into()))?;
    let mut fields = std::collections::BTreeMap::new();
    for part in body.trim().split(',') {
        let (k, v) = part.split_once('=').ok_or_else(|| Error::Parse(format!("trace: malformed header field '{part}'")))?;
        fields.insert(k.trim(), v.trim());
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Parse(format!("trace: header lacks '{k}'")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| Error::Parse(format!("trace: header '{k}': {e}"))) };
    let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| Error::Parse(format!("trace: header '{k}': {e}"))) };
    let optional = |k: &str| fields.get(k).copied().filter(|v| !v.is_empty());
    let init_sites = match optional("init") {
        Some(v) => v
            .split(';')
            .map(|s| s.parse().map_err(|e| Error::Parse(format!("trace: header 'init': {e}"))))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    Ok(TraceMeta {
        n_sites: int("n")?,
        n_particles: int("N")?,
        shape: get("shape")?.to_string(),
        hopping: num("J")?,
        interaction: num("U")?,
        init_sites,
        frame: optional("frame").map(str::to_string),
        window: optional("window")
            .map(|v| v.parse().map_err(|e| Error::Parse(format!("trace: header 'window': {e}"))))
            .transpose()?,
        theta: optional("theta")
            .map(|v| v.parse().map_err(|e| Error::Parse(format!("trace: header 'theta': {e}"))))
            .transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;
    use std::sync::{Arc, OnceLock};

    use super::*;
    use crate::wannier::{oscillator_level, FrameParams};

    fn frame() -> &'static WannierFrame {
        static FRAME: OnceLock<WannierFrame> = OnceLock::new();
        FRAME.get_or_init(|| WannierFrame::build(FrameParams::default()).unwrap())
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fock(n: usize, sites: &[usize]) -> QuantumState {
        let basis = Arc::new(FockBasis::enumerate(n, sites.len()).unwrap());
        QuantumState::fock(basis, sites).unwrap()
    }

    fn engine(basis: &FockBasis, method: WMethod, theta: f64) -> WEntropyEngine {
        WEntropyEngine::new(basis, frame().projection(), WOptions { method, prune_threshold: theta, ..WOptions::default() }).unwrap()
    }

    #[test]
    fn shannon_values() {
        assert_eq!(shannon(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((shannon(&[0.5, 0.5]).unwrap() - LN_2).abs() < 1e-15);
        for d in [3usize, 7, 100] {
            let p = vec![1.0 / d as f64; d];
            assert!((shannon(&p).unwrap() - (d as f64).ln()).abs() < 1e-12);
        }
        // zeros contribute nothing
        assert_eq!(shannon(&[0.5, 0.0, 0.5]).unwrap(), shannon(&[0.5, 0.5]).unwrap());
        assert!(shannon(&[1e-13 * -0.5, 1.0]).is_ok());
        assert!(matches!(shannon(&[-0.1, 1.1]), Err(Error::InvalidProbability(_))));
        assert!(shannon(&[0.7, 0.7]).is_err());
        assert!(shannon(&[f64::NAN]).is_err());
    }

    #[test]
    fn f_entropy_values() {
        assert_eq!(f_entropy(&fock(5, &[2])).unwrap(), 0.0);
        let basis = Arc::new(FockBasis::enumerate(4, 2).unwrap());
        let mut a = vec![c(0.0, 0.0); basis.dim()];
        a[1] = c(0.5f64.sqrt(), 0.0);
        a[4] = c(0.0, -(0.5f64.sqrt()));
        let psi = QuantumState::new(basis, a).unwrap();
        assert!((f_entropy(&psi).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn f_entropy_of_two_site_rabi_oscillation() {
        use crate::dynamics::{Propagator, PropagatorPolicy};
        use crate::fock::SparseHamiltonian;
        use crate::lattice::LatticeGraph;
        let g = LatticeGraph::chain(2).unwrap();
        let basis = Arc::new(FockBasis::enumerate(2, 1).unwrap());
        let h = Arc::new(SparseHamiltonian::build(&g, &basis, 1.0, 0.0).unwrap());
        let prop = Propagator::new(h, PropagatorPolicy::Spectral).unwrap();
        let psi0 = QuantumState::fock(basis, &[0]).unwrap();
        let binary = |p: f64| -> f64 { [p, 1.0 - p].iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum() };
        for i in 0..200 {
            let t = i as f64 * 0.1;
            let s = f_entropy(&prop.evolve(&psi0, t).unwrap()).unwrap();
            assert!((s - binary(t.cos().powi(2))).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn single_site_reduces_to_level_entropy() {
        let [h0, h1] = level_entropies(frame().projection()).unwrap();
        for (sites, h) in [(vec![], h0), (vec![0], h1)] {
            let psi = fock(1, &sites);
            let w = w_entropy_factorized(&psi, frame(), 0.0).unwrap();
            assert!((w.value - h).abs() < 1e-13);
            assert_eq!(w.dropped_mass, 0.0);
            assert_eq!(w.error_bound, 0.0);
            let basis = FockBasis::enumerate(1, sites.len()).unwrap();
            assert!((mean_fock_w_entropy(&basis, frame()).unwrap() - h).abs() < 1e-15);
        }
        // an occupied site spreads over more cells than an empty one
        assert!(h1 > h0);
    }

    #[test]
    fn fock_states_are_additive_and_cross_term_free() {
        for n in 1..=4 {
            for np in 0..=n {
                let basis = FockBasis::enumerate(n, np).unwrap();
                let fac = engine(&basis, WMethod::Factorized, 0.0);
                let exact = engine(&basis, WMethod::Exact, 0.0);
                let basis = Arc::new(basis);
                for &mask in basis.states() {
                    let sites: Vec<usize> = (0..n).filter(|s| mask >> s & 1 == 1).collect();
                    let psi = QuantumState::fock(basis.clone(), &sites).unwrap();
                    let f = fac.evaluate(&psi).unwrap().value;
                    let e = exact.evaluate(&psi).unwrap().value;
                    let additive = fock_w_entropy(mask, n, frame().projection()).unwrap();
                    assert!((f - additive).abs() < 1e-10, "n={n} mask={mask:b}");
                    assert!((f - e).abs() < 1e-10, "n={n} mask={mask:b} {f} {e}");
                }
                let mean = mean_fock_w_entropy(&basis, frame()).unwrap();
                assert!((mean - fock_w_entropy(basis.state(0), n, frame().projection()).unwrap()).abs() < 1e-12);
            }
        }
    }

    /// `⟨w_i ⊗ w_j|ψ⟩` for ψ = (|10⟩ + |01⟩)/√2, from quadrature overlaps of
    /// the frame functions with the oscillator levels.
    fn two_site_superposition_probabilities() -> Vec<f64> {
        let f = frame();
        let grid = f.grid();
        let levels = [0, 1].map(|m| oscillator_level(grid, m, f.params().oscillator_length));
        let overlaps: Vec<[Complex64; 2]> = f
            .cells()
            .iter()
            .map(|&cell| {
                let w = f.function(cell).unwrap();
                [0, 1].map(|m| grid.inner(&w, &levels[m]))
            })
            .collect();
        // window-normalize each level, as the entropy walk does
        let norms = [0, 1].map(|m| overlaps.iter().map(|o| o[m].norm_sqr()).sum::<f64>().sqrt());
        let mut p = Vec::new();
        for oi in &overlaps {
            for oj in &overlaps {
                // site 0 is the low bit: |10⟩ has site 0 occupied
                let a = (oi[1] / norms[1]) * (oj[0] / norms[0]) + (oi[0] / norms[0]) * (oj[1] / norms[1]);
                p.push((a / 2f64.sqrt()).norm_sqr());
            }
        }
        p
    }

    fn two_site_superposition() -> QuantumState {
        let basis = Arc::new(FockBasis::enumerate(2, 1).unwrap());
        let s = 0.5f64.sqrt();
        QuantumState::new(basis, vec![c(s, 0.0), c(s, 0.0)]).unwrap()
    }

    #[test]
    fn exact_variant_matches_full_enumeration() {
        let psi = two_site_superposition();
        let oracle = two_site_superposition_probabilities();
        assert_eq!(oracle.len(), 625);
        let total: f64 = oracle.iter().sum();
        let expected = -oracle.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        let exact = w_entropy_exact(&psi, frame(), 0.0).unwrap();
        assert!((exact.value - expected).abs() < 1e-8, "{} {}", exact.value, expected);
        let full = exact_cell_probabilities(&psi, frame().projection(), 1e9).unwrap();
        assert!((full.iter().sum::<f64>() - total).abs() < 1e-8);
        assert!((w_entropy_mixed(&full).unwrap() - exact.value).abs() < 1e-12);
        let factorized = w_entropy_factorized(&psi, frame(), 0.0).unwrap();
        // the cross terms carry real weight here; both values are reported
        assert!((factorized.value - exact.value).abs() > 1e-3, "{} {}", factorized.value, exact.value);
    }

    #[test]
    fn global_phase_invariance() {
        let psi = two_site_superposition();
        let phase = Complex64::from_polar(1.0, 0.731);
        let rotated = QuantumState::new(psi.basis().clone(), psi.amplitudes().iter().map(|a| a * phase).collect()).unwrap();
        for method in [WMethod::Factorized, WMethod::Exact] {
            let e = engine(psi.basis(), method, 1e-14);
            let (a, b) = (e.evaluate(&psi).unwrap(), e.evaluate(&rotated).unwrap());
            assert!((a.value - b.value).abs() < 1e-13);
        }
    }

    #[test]
    fn cell_relabelling_invariance() {
        let proj = frame().projection();
        let perm: Vec<usize> = (0..proj.n_cells()).map(|i| (i * 7 + 3) % proj.n_cells()).collect();
        let shuffled = LevelProjection::new(
            perm.iter().map(|&i| proj.cells()[i]).collect(),
            [0, 1].map(|m| perm.iter().map(|&i| proj.coefficients(m)[i]).collect()),
        )
        .unwrap();
        let psi = two_site_superposition();
        for method in [WMethod::Factorized, WMethod::Exact] {
            let options = WOptions { method, prune_threshold: 0.0, ..WOptions::default() };
            let a = WEntropyEngine::new(psi.basis(), proj, options).unwrap().evaluate(&psi).unwrap();
            let b = WEntropyEngine::new(psi.basis(), &shuffled, options).unwrap().evaluate(&psi).unwrap();
            assert!((a.value - b.value).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_state_entropy() {
        assert!((w_entropy_mixed(&vec![1.0 / 25.0; 25]).unwrap() - 25f64.ln()).abs() < 1e-12);
        // two pure states on disjoint cells, mixed with weights (w, 1 - w)
        let (p1, p2) = ([0.6, 0.4, 0.0, 0.0], [0.0, 0.0, 0.1, 0.9]);
        for w in [0.1, 0.5, 0.8] {
            let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| w * a + (1.0 - w) * b).collect();
            let lhs = w_entropy_mixed(&mix).unwrap();
            let rhs = w * shannon(&p1).unwrap() + (1.0 - w) * shannon(&p2).unwrap();
            assert!(lhs >= rhs);
            // disjoint supports: the excess is exactly the mixing entropy
            assert!((lhs - rhs - shannon(&[w, 1.0 - w]).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn pruning_error_is_within_bound() {
        use crate::dynamics::{Propagator, PropagatorPolicy};
        use crate::fock::SparseHamiltonian;
        use crate::lattice::LatticeGraph;
        for n in 2..=3 {
            let g = LatticeGraph::chain(n).unwrap();
            let basis = Arc::new(FockBasis::enumerate(n, 1).unwrap());
            let h = Arc::new(SparseHamiltonian::build(&g, &basis, 1.0, 0.0).unwrap());
            let prop = Propagator::new(h, PropagatorPolicy::Spectral).unwrap();
            let psi = prop.evolve(&QuantumState::fock(basis.clone(), &[0]).unwrap(), 2.3).unwrap();
            for method in [WMethod::Factorized, WMethod::Exact] {
                let full = engine(&basis, method, 0.0).evaluate(&psi).unwrap();
                for theta in [1e-14, 1e-12, 1e-8] {
                    let pruned = engine(&basis, method, theta).evaluate(&psi).unwrap();
                    assert!(full.value >= pruned.value - 1e-12);
                    assert!(full.value - pruned.value <= pruned.error_bound + 1e-12, "{method} n={n} θ={theta}");
                }
            }
        }
    }

    #[test]
    fn enumeration_budget() {
        let basis = FockBasis::enumerate(8, 4).unwrap();
        let options = WOptions { method: WMethod::Exact, ..WOptions::default() };
        assert!(matches!(WEntropyEngine::new(&basis, frame().projection(), options), Err(Error::EnumerationCost { .. })));
        assert!(WEntropyEngine::new(&basis, frame().projection(), WOptions::default()).is_ok());
        let tight = WOptions { cost_budget: 10.0, ..WOptions::default() };
        assert!(WEntropyEngine::new(&basis, frame().projection(), tight).is_err());
    }

    fn sample_trace(with_w: bool) -> EntropyTrace {
        let meta = TraceMeta {
            n_sites: 5,
            n_particles: 1,
            shape: "chain".into(),
            hopping: 1.0,
            interaction: 0.0,
            init_sites: vec![0],
            frame: with_w.then(|| "0123456789abcdef".to_string()),
            window: with_w.then_some(2),
            theta: with_w.then_some(1e-14),
        };
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let s_f: Vec<f64> = times.iter().map(|t| (t * 0.7).sin().abs() * 0.9).collect();
        let w = with_w.then(|| WColumns {
            s_w: s_f.iter().map(|s| 0.45 * s + 5.5).collect(),
            dropped_mass: vec![1.2e-11; 20],
            error_bound: vec![4.9e-10; 20],
        });
        EntropyTrace::new(meta, times, s_f, w).unwrap()
    }

    #[test]
    fn trace_csv_round_trip() {
        for with_w in [true, false] {
            let trace = sample_trace(with_w);
            let text = trace.to_csv();
            assert!(text.lines().nth(1) == Some("t,s_f,s_w,dropped_mass,error_bound"));
            let back = EntropyTrace::from_csv(&text).unwrap();
            assert_eq!(back, trace);
            assert_eq!(back.to_csv(), text);
        }
        assert!(sample_trace(false).to_csv().lines().nth(3).unwrap().ends_with(",,,"));
    }

    #[test]
    fn trace_schema_errors_name_the_column() {
        let text = sample_trace(true).to_csv().replace("t,s_f,s_w", "t,s_x,s_w");
        let err = EntropyTrace::from_csv(&text).unwrap_err().to_string();
        assert!(err.contains("s_x") && err.contains("s_f"), "{err}");
        let text = sample_trace(true).to_csv();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = lines[4].replacen(",5.", ",x5.", 1);
        let err = EntropyTrace::from_csv(&lines.join("\n")).unwrap_err().to_string();
        assert!(err.contains("'s_w'"), "{err}");
    }

    #[test]
    fn trace_invariants() {
        let t = sample_trace(false);
        let bad = EntropyTrace::new(t.meta.clone(), t.times.clone(), vec![0.0; 3], None);
        assert!(bad.is_err());
        let mut s_f = t.s_f.clone();
        s_f[3] = 5f64.ln() + 0.1;
        assert!(EntropyTrace::new(t.meta.clone(), t.times.clone(), s_f, None).is_err());
        let mut times = t.times.clone();
        times.swap(2, 3);
        assert!(EntropyTrace::new(t.meta.clone(), times, t.s_f.clone(), None).is_err());
    }
}
