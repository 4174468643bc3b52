//! End-to-end runs: lattice → basis → Hamiltonian → propagator → entropy traces.

use std::sync::Arc;

use rayon::prelude::*;

use crate::analysis::{PeriodDetector, PeriodResult};
use crate::dynamics::{Propagator, PropagatorPolicy, QuantumState};
use crate::entropy::{f_entropy, Column, EntropyTrace, TraceMeta, WColumns, WEntropyEngine, WOptions};
use crate::error::{Error, Result};
use crate::fock::{FockBasis, SparseHamiltonian};
use crate::lattice::LatticeGraph;
use crate::wannier::WannierFrame;

/// States evaluated together when W entropy fans out across samples.
const W_BATCH: usize = 256;

/// A quenched Fock state on a lattice, ready to evolve.
#[derive(Debug, Clone)]
pub struct System {
    graph: LatticeGraph,
    basis: Arc<FockBasis>,
    propagator: Propagator,
    initial: QuantumState,
    init_sites: Vec<usize>,
}

impl System {
    pub fn build(
        graph: LatticeGraph,
        init_sites: &[usize],
        hopping: f64,
        interaction: f64,
        policy: PropagatorPolicy,
    ) -> Result<Self> {
        let basis = Arc::new(FockBasis::enumerate(graph.n_sites(), init_sites.len())?);
        let initial = QuantumState::fock(basis.clone(), init_sites)?;
        let h = Arc::new(SparseHamiltonian::build(&graph, &basis, hopping, interaction)?);
        let propagator = Propagator::new(h, policy)?;
        Ok(System { graph, basis, propagator, initial, init_sites: init_sites.to_vec() })
    }

    pub fn graph(&self) -> &LatticeGraph {
        &self.graph
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn initial(&self) -> &QuantumState {
        &self.initial
    }

    pub fn init_sites(&self) -> &[usize] {
        &self.init_sites
    }

    fn meta(&self, frame: Option<&WannierFrame>, w: Option<&WOptions>) -> TraceMeta {
        let h = self.propagator.hamiltonian();
        TraceMeta {
            n_sites: self.graph.n_sites(),
            n_particles: self.basis.n_particles(),
            shape: self.graph.shape().to_string(),
            hopping: h.hopping(),
            interaction: h.interaction(),
            init_sites: self.init_sites.clone(),
            frame: frame.map(|f| f.hash()),
            window: frame.map(|f| f.params().window_x),
            theta: w.map(|o| o.prune_threshold),
        }
    }
}

/// W-entropy evaluation attached to a run.
#[derive(Debug, Clone)]
pub struct WSetup<'a> {
    pub frame: &'a WannierFrame,
    pub options: WOptions,
}

/// Samples `t = k·dt` for `k = 0..=n_steps`; S_w is added when `w` is given.
pub fn run_trace(system: &System, dt: f64, n_steps: usize, w: Option<&WSetup<'_>>) -> Result<EntropyTrace> {
    let engine = match w {
        Some(setup) => Some(WEntropyEngine::new(system.basis(), setup.frame.projection(), setup.options)?),
        None => None,
    };
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut s_f = Vec::with_capacity(n_steps + 1);
    let mut w_cols = WColumns { s_w: Vec::new(), dropped_mass: Vec::new(), error_bound: Vec::new() };
    let mut pending: Vec<QuantumState> = Vec::new();
    let flush = |pending: &mut Vec<QuantumState>, cols: &mut WColumns, engine: &WEntropyEngine| -> Result<()> {
        let results: Vec<_> = pending.par_iter().map(|s| engine.evaluate(s)).collect();
        for r in results {
            let r = r?;
            cols.s_w.push(r.value);
            cols.dropped_mass.push(r.dropped_mass);
            cols.error_bound.push(r.error_bound);
        }
        pending.clear();
        Ok(())
    };
    for item in system.propagator().stream(system.initial(), dt)?.take(n_steps + 1) {
        let (t, state) = item?;
        times.push(t);
        s_f.push(f_entropy(&state)?);
        if let Some(engine) = &engine {
            pending.push(state);
            if pending.len() == W_BATCH {
                flush(&mut pending, &mut w_cols, engine)?;
            }
        }
    }
    let w_cols = match &engine {
        Some(engine) => {
            flush(&mut pending, &mut w_cols, engine)?;
            Some(w_cols)
        }
        None => None,
    };
    EntropyTrace::new(system.meta(w.map(|s| s.frame), w.map(|s| &s.options)), times, s_f, w_cols)
}

/// Streams the trajectory until the regression time is detected or `horizon` passes.
pub fn search_period(
    system: &System,
    column: Column,
    eps: f64,
    dt: f64,
    horizon: f64,
    w: Option<&WSetup<'_>>,
) -> Result<PeriodResult> {
    let engine = match (column, w) {
        (Column::SF, _) => None,
        (Column::SW, Some(setup)) => Some(WEntropyEngine::new(system.basis(), setup.frame.projection(), setup.options)?),
        (Column::SW, None) => return Err(Error::validation("pipeline", "W-entropy period search needs a frame")),
    };
    let mut detector = PeriodDetector::new(eps)?;
    let steps = (horizon / dt).floor() as usize;
    for item in system.propagator().stream(system.initial(), dt)?.take(steps + 1) {
        let (t, state) = item?;
        let s = match &engine {
            Some(e) => e.evaluate(&state)?.value,
            None => f_entropy(&state)?,
        };
        if detector.push(t, s).is_some() {
            break;
        }
    }
    Ok(detector.finish())
}
