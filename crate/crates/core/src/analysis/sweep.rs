use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_linear, fit_saturation, LinearFit, PeriodResult, SaturationFit, SaturationOptions};
use crate::dynamics::PropagatorPolicy;
use crate::entropy::{Column, WOptions};
use crate::error::{Error, Result};
use crate::lattice::LatticeGraph;
use crate::pipeline::{run_trace, search_period, System, WSetup};
use crate::wannier::WannierFrame;

/// One parameter family of runs.
#[derive(Debug, Clone)]
pub enum Family {
    /// Chains of each length, particles on the leftmost sites.
    Sites { sizes: Vec<usize>, n_particles: usize },
    /// One chain, particles on the leftmost sites, for each count.
    Particles { n_sites: usize, counts: Vec<usize> },
    /// One chain, one run per initial occupation.
    Positions { n_sites: usize, placements: Vec<Vec<usize>> },
    /// Lattices of equal size, particles on the lowest-numbered sites.
    Shapes { lattices: Vec<LatticeGraph>, n_particles: usize },
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub graph: LatticeGraph,
    pub init_sites: Vec<usize>,
}

impl Family {
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let leftmost = |n: usize| (0..n).collect::<Vec<_>>();
        match self {
            Family::Sites { sizes, n_particles } => sizes
                .iter()
                .map(|&n| Ok(SweepPoint { graph: LatticeGraph::chain(n)?, init_sites: leftmost(*n_particles) }))
                .collect(),
            Family::Particles { n_sites, counts } => counts
                .iter()
                .map(|&c| Ok(SweepPoint { graph: LatticeGraph::chain(*n_sites)?, init_sites: leftmost(c) }))
                .collect(),
            Family::Positions { n_sites, placements } => placements
                .iter()
                .map(|p| Ok(SweepPoint { graph: LatticeGraph::chain(*n_sites)?, init_sites: p.clone() }))
                .collect(),
            Family::Shapes { lattices, n_particles } => {
                if lattices.windows(2).any(|w| w[0].n_sites() != w[1].n_sites()) {
                    return Err(Error::validation("analysis: sweep", "shape family needs lattices of equal size"));
                }
                Ok(lattices.iter().map(|g| SweepPoint { graph: g.clone(), init_sites: leftmost(*n_particles) }).collect())
            }
        }
    }
}

/// Per-point run settings shared by the whole sweep.
#[derive(Debug, Clone)]
pub struct SweepSettings<'a> {
    pub hopping: f64,
    pub interaction: f64,
    pub policy: PropagatorPolicy,
    pub dt: f64,
    pub t_max: f64,
    /// W entropy is evaluated for lattices up to this size.
    pub w_max_sites: usize,
    pub frame: Option<&'a WannierFrame>,
    pub w_options: WOptions,
    pub saturation_column: Column,
    pub saturation: SaturationOptions,
    pub period_column: Column,
    pub eps: f64,
    pub horizon: f64,
    pub fit_linear: bool,
    pub fit_saturation: bool,
    pub find_period: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_sites: usize,
    pub n_particles: usize,
    pub shape: String,
    pub init_sites: Vec<usize>,
    pub linear: Option<LinearFit>,
    pub saturation: Option<SaturationFit>,
    pub period: Option<PeriodResult>,
    /// Module-qualified message of the first failure at this point.
    pub error: Option<String>,
}

fn run_point(point: &SweepPoint, s: &SweepSettings<'_>) -> SweepRow {
    let mut row = SweepRow {
        n_sites: point.graph.n_sites(),
        n_particles: point.init_sites.len(),
        shape: point.graph.shape().to_string(),
        init_sites: point.init_sites.clone(),
        linear: None,
        saturation: None,
        period: None,
        error: None,
    };
    if let Err(e) = fill_point(point, s, &mut row) {
        row.error = Some(e.to_string());
    }
    row
}

fn fill_point(point: &SweepPoint, s: &SweepSettings<'_>, row: &mut SweepRow) -> Result<()> {
    let system = System::build(point.graph.clone(), &point.init_sites, s.hopping, s.interaction, s.policy)?;
    let w_setup = match s.frame {
        Some(frame) if point.graph.n_sites() <= s.w_max_sites => Some(WSetup { frame, options: s.w_options }),
        _ => None,
    };
    let needs_w = s.fit_linear
        || (s.fit_saturation && s.saturation_column == Column::SW)
        || (s.find_period && s.period_column == Column::SW);
    if needs_w && w_setup.is_none() {
        return Err(Error::validation(
            "analysis: sweep",
            format!("W entropy is not available for {} sites", point.graph.n_sites()),
        ));
    }
    if s.fit_linear || s.fit_saturation {
        let steps = (s.t_max / s.dt).round() as usize;
        let trace = run_trace(&system, s.dt, steps, w_setup.as_ref().filter(|_| needs_w))?;
        if s.fit_linear {
            let w = trace.w.as_ref().expect("W columns requested");
            row.linear = Some(fit_linear(&trace.s_f, &w.s_w)?);
        }
        if s.fit_saturation {
            let values = trace.column(s.saturation_column).expect("column evaluated");
            row.saturation = Some(fit_saturation(&trace.times, values, &s.saturation)?);
        }
    }
    if s.find_period {
        row.period = Some(search_period(&system, s.period_column, s.eps, s.dt, s.horizon, w_setup.as_ref())?);
    }
    Ok(())
}

/// Runs every point on up to `workers` threads; rows come back in point order.
pub fn sweep(points: &[SweepPoint], settings: &SweepSettings<'_>, workers: usize) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation("analysis: sweep", format!("thread pool: {e}")))?;
    Ok(pool.install(|| points.par_iter().map(|p| run_point(p, settings)).collect()))
}

pub const SWEEP_COLUMNS: &str = "n,N,shape,init_sites,k,b,r2_lin,A,omega,r2_sat,T,found";

/// Sweep table as CSV; absent values are empty fields.
pub fn sweep_csv(header: &str, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(SWEEP_COLUMNS);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let init: Vec<String> = r.init_sites.iter().map(|s| s.to_string()).collect();
        let found = match r.period {
            Some(p) => p.found().to_string(),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n_sites,
            r.n_particles,
            r.shape,
            init.join(";"),
            opt(r.linear.map(|l| l.k)),
            opt(r.linear.map(|l| l.b)),
            opt(r.linear.map(|l| l.r2)),
            opt(r.saturation.map(|s| s.a)),
            opt(r.saturation.map(|s| s.omega)),
            opt(r.saturation.map(|s| s.r2)),
            opt(r.period.and_then(|p| p.period)),
            found,
        );
    }
    out
}
