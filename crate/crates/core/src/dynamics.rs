//! Exact time evolution `ψ(t) = exp(-iHt) ψ(0)` (ħ = 1, time in units of 1/J).
//!
//! Small sectors are diagonalized densely and every sample time is evaluated
//! directly from the spectral decomposition. Large sectors are propagated
//! with an adaptive Lanczos (Krylov) exponential.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{FockBasis, SparseHamiltonian};

/// Largest dimension handled by dense diagonalization under [`PropagatorPolicy::Auto`].
pub const SPECTRAL_MAX_DIM: usize = 4000;

const NORM_TOLERANCE: f64 = 1e-10;

/// Normalized amplitude vector over a Fock basis.
#[derive(Debug, Clone)]
pub struct QuantumState {
    basis: Arc<FockBasis>,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    pub fn new(basis: Arc<FockBasis>, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                context: "dynamics: state",
                expected: basis.dim(),
                actual: amplitudes.len(),
            });
        }
        let state = QuantumState { basis, amplitudes };
        let norm = state.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::validation("dynamics: state", format!("state norm {norm} is not 1")));
        }
        Ok(state)
    }

    /// Single Fock state with particles on `sites`.
    pub fn fock(basis: Arc<FockBasis>, sites: &[usize]) -> Result<Self> {
        let mask = basis.mask_from_sites(sites)?;
        let index = basis.index_of(mask).expect("validated mask lies in the basis");
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(QuantumState { basis, amplitudes })
    }

    pub(crate) fn from_raw(basis: Arc<FockBasis>, amplitudes: Vec<Complex64>) -> Self {
        QuantumState { basis, amplitudes }
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<ψ|H|ψ>`.
    pub fn energy(&self, h: &SparseHamiltonian) -> Result<f64> {
        let hv = h.apply(&self.amplitudes)?;
        Ok(self.amplitudes.iter().zip(&hv).map(|(a, b)| (a.conj() * b).re).sum())
    }

    /// Probability that `site` is occupied.
    pub fn site_occupation(&self, site: usize) -> f64 {
        self.basis
            .states()
            .iter()
            .zip(&self.amplitudes)
            .filter(|(s, _)| (*s >> site) & 1 == 1)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorPolicy {
    #[default]
    Auto,
    Spectral,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    pub subspace_dim: usize,
    /// Allowed local error per unit time.
    pub tolerance: f64,
    /// Initial internal substep.
    pub initial_step: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig { subspace_dim: 30, tolerance: 1e-9, initial_step: 0.5 }
    }
}

#[derive(Debug, Clone)]
enum Mode {
    Spectral { energies: DVector<f64>, vectors: DMatrix<f64> },
    Krylov(KrylovConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorMode {
    Spectral,
    Krylov,
}

/// Time-evolution operator for one Hamiltonian.
#[derive(Debug, Clone)]
pub struct Propagator {
    hamiltonian: Arc<SparseHamiltonian>,
    mode: Mode,
}

impl Propagator {
    pub fn new(h: Arc<SparseHamiltonian>, policy: PropagatorPolicy) -> Result<Self> {
        Self::with_krylov_config(h, policy, KrylovConfig::default())
    }

    pub fn with_krylov_config(h: Arc<SparseHamiltonian>, policy: PropagatorPolicy, config: KrylovConfig) -> Result<Self> {
        let spectral = match policy {
            PropagatorPolicy::Auto => h.dim() <= SPECTRAL_MAX_DIM,
            PropagatorPolicy::Spectral => true,
            PropagatorPolicy::Krylov => false,
        };
        let mode = if spectral {
            let eig = SymmetricEigen::try_new(h.to_dense(), f64::EPSILON, 0)
                .ok_or_else(|| Error::Eigensolver(format!("no convergence for dimension {}", h.dim())))?;
            check_decomposition(&h, &eig.eigenvalues, &eig.eigenvectors)?;
            Mode::Spectral { energies: eig.eigenvalues, vectors: eig.eigenvectors }
        } else {
            if config.subspace_dim < 2 || !(config.tolerance > 0.0) || !(config.initial_step > 0.0) {
                return Err(Error::validation("dynamics: krylov", format!("invalid configuration {config:?}")));
            }
            Mode::Krylov(config)
        };
        Ok(Propagator { hamiltonian: h, mode })
    }

    pub fn mode(&self) -> PropagatorMode {
        match self.mode {
            Mode::Spectral { .. } => PropagatorMode::Spectral,
            Mode::Krylov(_) => PropagatorMode::Krylov,
        }
    }

    pub fn hamiltonian(&self) -> &SparseHamiltonian {
        &self.hamiltonian
    }

    /// Eigenvalues in ascending order (spectral mode only).
    pub fn energies(&self) -> Option<Vec<f64>> {
        match &self.mode {
            Mode::Spectral { energies, .. } => {
                let mut e: Vec<f64> = energies.iter().copied().collect();
                e.sort_by(f64::total_cmp);
                Some(e)
            }
            Mode::Krylov(_) => None,
        }
    }

    /// Eigenvector matrix (columns), spectral mode only.
    pub fn eigenvectors(&self) -> Option<&DMatrix<f64>> {
        match &self.mode {
            Mode::Spectral { vectors, .. } => Some(vectors),
            Mode::Krylov(_) => None,
        }
    }

    fn check_state(&self, psi: &QuantumState) -> Result<()> {
        if psi.dim() != self.hamiltonian.dim() {
            return Err(Error::DimensionMismatch {
                context: "dynamics: evolve",
                expected: self.hamiltonian.dim(),
                actual: psi.dim(),
            });
        }
        Ok(())
    }

    /// `exp(-iHt) ψ0`; negative `t` runs backwards.
    pub fn evolve(&self, psi0: &QuantumState, t: f64) -> Result<QuantumState> {
        self.check_state(psi0)?;
        if t == 0.0 {
            return Ok(psi0.clone());
        }
        let amplitudes = match &self.mode {
            Mode::Spectral { energies, vectors } => {
                let coeffs = spectral_coefficients(vectors, psi0.amplitudes());
                spectral_amplitudes(energies, vectors, &coeffs, t)
            }
            Mode::Krylov(config) => krylov_evolve(&self.hamiltonian, psi0.amplitudes(), t, config)?,
        };
        Ok(QuantumState::from_raw(psi0.basis().clone(), amplitudes))
    }

    /// Lazily yields `(k·dt, ψ(k·dt))` for `k = 0, 1, 2, ...`.
    pub fn stream(&self, psi0: &QuantumState, dt: f64) -> Result<TrajectoryStream<'_>> {
        self.check_state(psi0)?;
        if !(dt > 0.0) {
            return Err(Error::validation("dynamics: trajectory", format!("sampling interval must be positive, got {dt}")));
        }
        let coeffs = match &self.mode {
            Mode::Spectral { vectors, .. } => Some(spectral_coefficients(vectors, psi0.amplitudes())),
            Mode::Krylov(_) => None,
        };
        Ok(TrajectoryStream { prop: self, initial: psi0.clone(), current: psi0.clone(), coeffs, dt, step: 0 })
    }
}

fn check_decomposition(h: &SparseHamiltonian, energies: &DVector<f64>, vectors: &DMatrix<f64>) -> Result<()> {
    let dim = h.dim();
    // deterministic probe vector
    let probe: Vec<f64> = (0..dim).map(|i| ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5).collect();
    let probe_c: Vec<Complex64> = probe.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let hx = h.apply(&probe_c)?;
    let x = DVector::from_vec(probe);
    let c = vectors.tr_mul(&x);
    let back = vectors * &c;
    let recon = vectors * c.component_mul(energies);
    let scale = 1.0 + energies.amax();
    let orth_err = (&back - &x).amax();
    let recon_err = recon.iter().zip(&hx).map(|(a, b)| (a - b.re).abs()).fold(0.0, f64::max);
    if orth_err > 1e-9 || recon_err > 1e-9 * scale {
        return Err(Error::Eigensolver(format!(
            "decomposition check failed: orthogonality error {orth_err:e}, reconstruction error {recon_err:e}"
        )));
    }
    Ok(())
}

/// `Vᵀ ψ` for real `V` and complex `ψ`.
fn spectral_coefficients(vectors: &DMatrix<f64>, psi: &[Complex64]) -> Vec<Complex64> {
    let re = DVector::from_iterator(psi.len(), psi.iter().map(|a| a.re));
    let im = DVector::from_iterator(psi.len(), psi.iter().map(|a| a.im));
    let cr = vectors.tr_mul(&re);
    let ci = vectors.tr_mul(&im);
    cr.iter().zip(ci.iter()).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

fn spectral_amplitudes(energies: &DVector<f64>, vectors: &DMatrix<f64>, coeffs: &[Complex64], t: f64) -> Vec<Complex64> {
    let dim = coeffs.len();
    let mut re = DVector::zeros(dim);
    let mut im = DVector::zeros(dim);
    for k in 0..dim {
        let phase = Complex64::from_polar(1.0, -energies[k] * t) * coeffs[k];
        re[k] = phase.re;
        im[k] = phase.im;
    }
    let out_re = vectors * re;
    let out_im = vectors * im;
    out_re.iter().zip(out_im.iter()).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

/// Lanczos decomposition `H V_m = V_m T_m + β_m v_{m+1} e_mᵀ`.
struct Lanczos {
    basis: Vec<Vec<Complex64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// β_m coupling to the next (unbuilt) vector; zero on breakdown.
    residual: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn lanczos(h: &SparseHamiltonian, v0: &[Complex64], m: usize) -> Result<Lanczos> {
    let dim = v0.len();
    let norm0 = dot(v0, v0).re.sqrt();
    let mut basis = vec![v0.iter().map(|x| x / norm0).collect::<Vec<_>>()];
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut w = vec![Complex64::new(0.0, 0.0); dim];
    let m = m.min(dim);
    for j in 0..m {
        h.apply_into(&basis[j], &mut w)?;
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for v in &basis {
                let proj = dot(v, &w);
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= proj * vi;
                }
            }
        }
        let b = dot(&w, &w).re.sqrt();
        let scale = alpha.iter().map(|x| x.abs()).fold(1.0, f64::max);
        if b <= 1e-13 * scale || j + 1 == dim {
            return Ok(Lanczos { basis, alpha, beta, residual: if j + 1 == dim { 0.0 } else { b } });
        }
        if j + 1 == m {
            return Ok(Lanczos { basis, alpha, beta, residual: b });
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    unreachable!("loop returns on its last iteration")
}

fn krylov_evolve(h: &SparseHamiltonian, psi: &[Complex64], t: f64, config: &KrylovConfig) -> Result<Vec<Complex64>> {
    let mut v = psi.to_vec();
    let direction = t.signum();
    let total = t.abs();
    let mut done = 0.0;
    let mut step = config.initial_step.min(total);
    let min_step = 1e-10 * total.max(1.0);
    while done < total {
        let norm = dot(&v, &v).re.sqrt();
        if norm == 0.0 {
            return Ok(v);
        }
        let lz = lanczos(h, &v, config.subspace_dim)?;
        let m = lz.alpha.len();
        let tri = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                lz.alpha[i]
            } else if i + 1 == j {
                lz.beta[i]
            } else if j + 1 == i {
                lz.beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(tri);
        let exact = lz.residual == 0.0;
        step = step.min(total - done);
        loop {
            let tau = direction * step;
            // y = Q exp(-iτD) Qᵀ e1
            let y: Vec<Complex64> = (0..m)
                .map(|i| {
                    (0..m)
                        .map(|k| {
                            eig.eigenvectors[(i, k)]
                                * eig.eigenvectors[(0, k)]
                                * Complex64::from_polar(1.0, -eig.eigenvalues[k] * tau)
                        })
                        .sum()
                })
                .collect();
            let err = if exact { 0.0 } else { norm * lz.residual * y[m - 1].norm() };
            if err <= config.tolerance * step {
                let mut next = vec![Complex64::new(0.0, 0.0); v.len()];
                for (vec, coef) in lz.basis.iter().zip(&y) {
                    let c = coef * norm;
                    for (n, b) in next.iter_mut().zip(vec) {
                        *n += c * b;
                    }
                }
                v = next;
                done += step;
                if total - done < 1e-14 * total.max(1.0) {
                    done = total;
                }
                // grow cautiously for the next substep
                let ratio = if err > 0.0 { (config.tolerance * step / err).powf(1.0 / m as f64) } else { 2.0 };
                step = (step * (0.9 * ratio).clamp(1.0, 2.0)).min(total - done).max(0.0);
                if step == 0.0 {
                    step = (total - done).max(0.0);
                }
                break;
            }
            let shrink = (0.9 * (config.tolerance * step / err).powf(1.0 / m as f64)).clamp(0.1, 0.5);
            step *= shrink;
            if step < min_step {
                return Err(Error::KrylovStep {
                    t: direction * done,
                    message: format!(
                        "substep fell below {min_step:e} (error estimate {err:e}); increase the subspace dimension or relax the tolerance"
                    ),
                });
            }
        }
    }
    Ok(v)
}

/// Iterator over a sampled trajectory; see [`Propagator::stream`].
pub struct TrajectoryStream<'a> {
    prop: &'a Propagator,
    initial: QuantumState,
    current: QuantumState,
    coeffs: Option<Vec<Complex64>>,
    dt: f64,
    step: usize,
}

impl Iterator for TrajectoryStream<'_> {
    type Item = Result<(f64, QuantumState)>;

    fn next(&mut self) -> Option<Self::Item> {
        let k = self.step;
        self.step += 1;
        let t = k as f64 * self.dt;
        if k == 0 {
            return Some(Ok((0.0, self.initial.clone())));
        }
        let state = match (&self.prop.mode, &self.coeffs) {
            (Mode::Spectral { energies, vectors }, Some(coeffs)) => {
                QuantumState::from_raw(self.initial.basis().clone(), spectral_amplitudes(energies, vectors, coeffs, t))
            }
            (Mode::Krylov(config), _) => {
                match krylov_evolve(&self.prop.hamiltonian, self.current.amplitudes(), self.dt, config) {
                    Ok(a) => QuantumState::from_raw(self.initial.basis().clone(), a),
                    Err(e) => return Some(Err(e)),
                }
            }
            _ => unreachable!("spectral streams carry coefficients"),
        };
        self.current = state.clone();
        Some(Ok((t, state)))
    }
}

/// A per-sample measurement on the evolving state.
pub trait Observer {
    fn observe(&mut self, t: f64, state: &QuantumState) -> Result<f64>;
}

impl<F> Observer for F
where
    F: FnMut(f64, &QuantumState) -> Result<f64>,
{
    fn observe(&mut self, t: f64, state: &QuantumState) -> Result<f64> {
        self(t, state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One series per observer, in observer order.
    pub series: Vec<Vec<f64>>,
}

/// Runs every observer on `ψ(k·dt)` for `k = 0..=n_steps`.
pub fn sample_trajectory(
    prop: &Propagator,
    psi0: &QuantumState,
    dt: f64,
    n_steps: usize,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut series = vec![Vec::with_capacity(n_steps + 1); observers.len()];
    for item in prop.stream(psi0, dt)?.take(n_steps + 1) {
        let (t, state) = item?;
        times.push(t);
        for (index, (obs, out)) in observers.iter_mut().zip(series.iter_mut()).enumerate() {
            let value = obs.observe(t, &state).map_err(|e| Error::Observer { index, t, source: Box::new(e) })?;
            out.push(value);
        }
    }
    Ok(Trajectory { times, series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeGraph;

    fn system(g: LatticeGraph, n_particles: usize, u: f64) -> (Arc<FockBasis>, Arc<SparseHamiltonian>) {
        let basis = Arc::new(FockBasis::enumerate(g.n_sites(), n_particles).unwrap());
        let h = Arc::new(SparseHamiltonian::build(&g, &basis, 1.0, u).unwrap());
        (basis, h)
    }

    fn max_diff(a: &QuantumState, b: &QuantumState) -> f64 {
        a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    /// 2x2 matrix exponential by its Taylor series, independent of the eigensolver.
    fn taylor_expm_2x2(j: f64, t: f64) -> [[Complex64; 2]; 2] {
        let a = [[Complex64::new(0.0, 0.0), Complex64::new(0.0, j * t)], [Complex64::new(0.0, j * t), Complex64::new(0.0, 0.0)]];
        let mut result = [[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]];
        let mut term = result;
        for k in 1..200 {
            let mut next = [[Complex64::new(0.0, 0.0); 2]; 2];
            for i in 0..2 {
                for l in 0..2 {
                    next[i][l] = (term[i][0] * a[0][l] + term[i][1] * a[1][l]) / k as f64;
                }
            }
            term = next;
            for i in 0..2 {
                for l in 0..2 {
                    result[i][l] += term[i][l];
                }
            }
        }
        result
    }

    #[test]
    fn two_site_spectrum_and_rabi() {
        let (basis, h) = system(LatticeGraph::chain(2).unwrap(), 1, 0.0);
        let prop = Propagator::new(h, PropagatorPolicy::Auto).unwrap();
        assert_eq!(prop.mode(), PropagatorMode::Spectral);
        let e = prop.energies().unwrap();
        assert!((e[0] + 1.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
        let psi0 = QuantumState::fock(basis, &[0]).unwrap();
        for k in 0..=40 {
            let t = 0.5 * k as f64;
            let psi = prop.evolve(&psi0, t).unwrap();
            assert!((psi.site_occupation(0) - t.cos().powi(2)).abs() < 1e-12);
            // H = [[0,-1],[-1,0]] so exp(-iHt) = exp(i t σx)
            let u = taylor_expm_2x2(1.0, t.min(6.0));
            if t <= 6.0 {
                assert!((psi.amplitudes()[0] - u[0][0]).norm() < 1e-10);
                assert!((psi.amplitudes()[1] - u[1][0]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn identity_at_zero_time() {
        let (basis, h) = system(LatticeGraph::chain(4).unwrap(), 2, 0.5);
        let psi0 = QuantumState::fock(basis, &[0, 1]).unwrap();
        for policy in [PropagatorPolicy::Spectral, PropagatorPolicy::Krylov] {
            let prop = Propagator::new(h.clone(), policy).unwrap();
            assert_eq!(prop.evolve(&psi0, 0.0).unwrap().amplitudes(), psi0.amplitudes());
        }
    }

    #[test]
    fn time_reversal_and_unitarity() {
        let (basis, h) = system(LatticeGraph::grid(2, 3).unwrap(), 2, 0.7);
        let psi0 = QuantumState::fock(basis, &[0, 4]).unwrap();
        for policy in [PropagatorPolicy::Spectral, PropagatorPolicy::Krylov] {
            let prop = Propagator::new(h.clone(), policy).unwrap();
            let fwd = prop.evolve(&psi0, 13.7).unwrap();
            assert!((fwd.norm() - 1.0).abs() < 1e-10);
            let back = prop.evolve(&fwd, -13.7).unwrap();
            assert!(max_diff(&back, &psi0) < 1e-8);
        }
    }

    #[test]
    fn spectral_and_krylov_agree() {
        let (basis, h) = system(LatticeGraph::chain(10).unwrap(), 3, 0.4);
        assert!(basis.dim() <= 1000);
        let psi0 = QuantumState::fock(basis, &[0, 1, 2]).unwrap();
        let spec = Propagator::new(h.clone(), PropagatorPolicy::Spectral).unwrap();
        let kry = Propagator::new(h, PropagatorPolicy::Krylov).unwrap();
        let a = spec.evolve(&psi0, 100.0).unwrap();
        let b = kry.evolve(&psi0, 100.0).unwrap();
        assert!(max_diff(&a, &b) < 1e-7, "diff {}", max_diff(&a, &b));
        assert!((b.norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn spectral_decomposition_is_orthogonal() {
        let (_, h) = system(LatticeGraph::ring(8).unwrap(), 3, 1.0);
        let prop = Propagator::new(h.clone(), PropagatorPolicy::Spectral).unwrap();
        let v = prop.eigenvectors().unwrap();
        let e = prop.energies().unwrap();
        let gram = v.tr_mul(v);
        assert!((gram - DMatrix::identity(v.ncols(), v.ncols())).amax() < 1e-9);
        let mut sorted: Vec<f64> = h.to_dense().symmetric_eigenvalues().iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        assert!(e.iter().zip(&sorted).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn auto_policy_threshold() {
        assert_eq!(FockBasis::enumerate(16, 4).unwrap().dim(), 1820);
        assert!(1820 <= SPECTRAL_MAX_DIM);
        let (_, h) = system(LatticeGraph::chain(18).unwrap(), 6, 0.0);
        assert_eq!(h.dim(), 18564);
        assert_eq!(Propagator::new(h, PropagatorPolicy::Auto).unwrap().mode(), PropagatorMode::Krylov);
    }

    #[test]
    fn trajectory_observers() {
        let (basis, h) = system(LatticeGraph::chain(5).unwrap(), 2, 0.3);
        let psi0 = QuantumState::fock(basis, &[0, 1]).unwrap();
        for policy in [PropagatorPolicy::Spectral, PropagatorPolicy::Krylov] {
            let prop = Propagator::new(h.clone(), policy).unwrap();
            let e0 = psi0.energy(&h).unwrap();
            let hh = h.clone();
            let mut norm = |_t: f64, s: &QuantumState| Ok(s.norm());
            let mut energy = move |_t: f64, s: &QuantumState| s.energy(&hh);
            let traj = sample_trajectory(&prop, &psi0, 0.1, 200, &mut [&mut norm, &mut energy]).unwrap();
            assert_eq!(traj.times.len(), 201);
            assert_eq!(traj.times[200], 20.0);
            assert!(traj.series[0].iter().all(|n| (n - 1.0).abs() < 1e-10));
            assert!(traj.series[1].iter().all(|e| (e - e0).abs() < 1e-8));
        }
    }

    #[test]
    fn observer_failure_is_reported() {
        let (basis, h) = system(LatticeGraph::chain(3).unwrap(), 1, 0.0);
        let prop = Propagator::new(h, PropagatorPolicy::Auto).unwrap();
        let psi0 = QuantumState::fock(basis, &[0]).unwrap();
        let mut failing = |t: f64, _s: &QuantumState| if t > 0.25 { Err(Error::Parse("boom".into())) } else { Ok(0.0) };
        let err = sample_trajectory(&prop, &psi0, 0.1, 10, &mut [&mut failing]).unwrap_err();
        assert!(matches!(err, Error::Observer { index: 0, .. }));
        assert!(prop.stream(&psi0, 0.0).is_err());
    }

    #[test]
    fn state_validation() {
        let basis = Arc::new(FockBasis::enumerate(3, 1).unwrap());
        assert!(QuantumState::new(basis.clone(), vec![Complex64::new(1.0, 0.0); 3]).is_err());
        assert!(QuantumState::new(basis.clone(), vec![Complex64::new(1.0, 0.0); 2]).is_err());
        assert!(QuantumState::fock(basis.clone(), &[0, 1]).is_err());
        assert!(QuantumState::fock(basis, &[3]).is_err());
    }
}
