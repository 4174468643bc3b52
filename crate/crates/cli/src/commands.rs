//! The `trace`, `analyze`, `frame-build` and `sweep` subcommands.

use std::path::{Path, PathBuf};

use serde::Serialize;
use wentropy_core::analysis::{
    detect_period, fit_linear, fit_saturation, sweep, sweep_csv, Family, SaturationOptions, SweepRow, SweepSettings,
};
use wentropy_core::entropy::{Column, EntropyTrace};
use wentropy_core::lattice::LatticeGraph;
use wentropy_core::pipeline::{run_trace, System, WSetup};
use wentropy_core::wannier::{macro_spreads, WannierFrame};
use wentropy_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{read_text, write_atomic, write_json};

pub fn run_label(graph: &LatticeGraph, init_sites: &[usize]) -> String {
    let sites: Vec<String> = init_sites.iter().map(|s| s.to_string()).collect();
    format!("{}_n{}_N{}_s{}", graph.shape(), graph.n_sites(), init_sites.len(), sites.join("-"))
}

pub fn build_frame(cfg: &RunConfig) -> CliResult<Option<WannierFrame>> {
    if !cfg.entropy.enable_w {
        return Ok(None);
    }
    Ok(Some(WannierFrame::build(cfg.frame)?))
}

#[derive(Serialize)]
struct TraceSidecar<'a> {
    command: &'static str,
    config: &'a RunConfig,
    frame_hash: Option<String>,
    propagator: String,
    n_samples: usize,
    files: Vec<String>,
}

/// Runs one configured trajectory; returns the written files.
pub fn trace(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let graph = cfg.lattice.build()?;
    let system = System::build(
        graph.clone(),
        &cfg.physics.init_sites,
        cfg.physics.hopping,
        cfg.physics.interaction,
        cfg.physics.propagator,
    )?;
    let frame = build_frame(cfg)?;
    let setup = frame.as_ref().map(|f| WSetup { frame: f, options: cfg.w_options() });
    let trace = run_trace(&system, cfg.physics.dt, cfg.n_steps(), setup.as_ref())?;
    let label = run_label(&graph, &cfg.physics.init_sites);
    let csv = out.join(format!("trace_{label}.csv"));
    let json = out.join(format!("trace_{label}.json"));
    write_atomic(&csv, trace.to_csv().as_bytes())?;
    write_json(
        &json,
        &TraceSidecar {
            command: "trace",
            config: cfg,
            frame_hash: frame.as_ref().map(|f| f.hash()),
            propagator: format!("{:?}", system.propagator().mode()).to_lowercase(),
            n_samples: trace.len(),
            files: vec![file_name(&csv)],
        },
    )?;
    Ok(vec![csv, json])
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnalyzeOptions {
    pub linear: bool,
    pub saturation: bool,
    pub period: bool,
    pub eps: f64,
    pub period_column: Column,
    pub saturation_column: Column,
}

fn missing_column(path: &Path, column: Column, purpose: &str) -> CliError {
    CliError::Core(Error::Parse(format!("{}: column {column} is empty; {purpose} needs it", path.display())))
}

fn column<'a>(trace: &'a EntropyTrace, path: &Path, column: Column, purpose: &str) -> CliResult<&'a [f64]> {
    trace.column(column).ok_or_else(|| missing_column(path, column, purpose))
}

/// Fits one stored trace.
pub fn analyze_trace(trace: &EntropyTrace, path: &Path, opts: &AnalyzeOptions) -> CliResult<SweepRow> {
    let m = &trace.meta;
    let mut row = SweepRow {
        n_sites: m.n_sites,
        n_particles: m.n_particles,
        shape: m.shape.clone(),
        init_sites: m.init_sites.clone(),
        linear: None,
        saturation: None,
        period: None,
        error: None,
    };
    if opts.linear {
        let sw = column(trace, path, Column::SW, "the linear fit")?;
        row.linear = Some(fit_linear(&trace.s_f, sw)?);
    }
    if opts.saturation {
        let v = column(trace, path, opts.saturation_column, "the saturation fit")?;
        row.saturation = Some(fit_saturation(&trace.times, v, &SaturationOptions::default())?);
    }
    if opts.period {
        let v = column(trace, path, opts.period_column, "the period search")?;
        row.period = Some(detect_period(&trace.times, v, opts.eps)?);
    }
    Ok(row)
}

#[derive(Serialize)]
struct AnalysisSidecar<'a> {
    command: &'static str,
    inputs: Vec<String>,
    options: &'a AnalyzeOptions,
    rows: &'a [SweepRow],
}

pub fn analyze(inputs: &[PathBuf], opts: &AnalyzeOptions, out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut rows = Vec::with_capacity(inputs.len());
    for path in inputs {
        let text = read_text(path)?;
        let trace = EntropyTrace::from_csv(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })?;
        rows.push(analyze_trace(&trace, path, opts)?);
    }
    let names: Vec<String> = inputs.iter().map(|p| file_name(p)).collect();
    let header = format!("inputs={}\neps={}", names.join(";"), opts.eps);
    let csv = out.join("analysis.csv");
    let json = out.join("analysis.json");
    write_atomic(&csv, sweep_csv(&header, &rows).as_bytes())?;
    write_json(&json, &AnalysisSidecar { command: "analyze", inputs: names, options: opts, rows: &rows })?;
    Ok(vec![csv, json])
}

#[derive(Debug, Serialize)]
pub struct FrameReport {
    pub hash: String,
    pub n_cells: usize,
    pub gram_deviation: f64,
    pub min_gram_eigenvalue: f64,
    pub leakage: [f64; 2],
    /// Largest `|⟨q⟩ - jx·x0|` over cells, in units of x0.
    pub max_position_offset: f64,
    /// Largest `|⟨p⟩ - jk·k0|` over cells, in units of k0.
    pub max_momentum_offset: f64,
    pub commutator_max: f64,
}

pub fn frame_report(frame: &WannierFrame) -> CliResult<FrameReport> {
    let p = frame.params();
    let diag = macro_spreads(frame, 2)?;
    let mut dq: f64 = 0.0;
    let mut dp: f64 = 0.0;
    for (j, &(jx, jk)) in diag.cells.iter().enumerate() {
        dq = dq.max((diag.mean_q[j] - jx as f64 * p.x0).abs() / p.x0);
        dp = dp.max((diag.mean_p[j] - jk as f64 * p.k0).abs() / p.k0);
    }
    Ok(FrameReport {
        hash: frame.hash(),
        n_cells: frame.cells().len(),
        gram_deviation: frame.gram_deviation(),
        min_gram_eigenvalue: frame.min_gram_eigenvalue(),
        leakage: frame.projection().leakage(),
        max_position_offset: dq,
        max_momentum_offset: dp,
        commutator_max: diag.commutator().amax(),
    })
}

#[derive(Serialize)]
struct FrameSidecar<'a> {
    command: &'static str,
    config: &'a RunConfig,
    report: FrameReport,
    files: Vec<String>,
}

pub fn frame_build(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let frame = WannierFrame::build(cfg.frame)?;
    let report = frame_report(&frame)?;
    let export = out.join(format!("frame_{}.txt", &report.hash[..12]));
    let json = out.join(format!("frame_{}.json", &report.hash[..12]));
    write_atomic(&export, frame.export().as_bytes())?;
    write_json(&json, &FrameSidecar { command: "frame-build", config: cfg, report, files: vec![file_name(&export)] })?;
    Ok(vec![export, json])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    /// Chain lengths, e.g. `3,4,5,6`.
    Sites,
    /// Particle counts on `lattice.n` sites, e.g. `1,2,3`.
    Particles,
    /// Initial placements, `;`-separated, sites joined by `+`, e.g. `0;1;2+3`.
    Positions,
    /// Lattices with `lattice.n` sites: `chain`, `ring`, `gridRxC`.
    Shapes,
}

fn parse_list<T: std::str::FromStr>(text: &str, sep: char, what: &str) -> CliResult<Vec<T>> {
    text.split(sep)
        .map(|s| s.trim().parse().map_err(|_| CliError::Config(format!("bad {what} `{s}` in `{text}`"))))
        .collect()
}

fn parse_shape(name: &str, n: usize) -> CliResult<LatticeGraph> {
    let name = name.trim();
    let g = match name {
        "chain" => LatticeGraph::chain(n)?,
        "ring" => LatticeGraph::ring(n)?,
        _ => {
            let dims = name
                .strip_prefix("grid")
                .and_then(|d| d.split_once('x'))
                .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)));
            match dims {
                Some((r, c)) => LatticeGraph::grid(r, c)?,
                None => return Err(CliError::Config(format!("unknown shape `{name}`; use chain, ring or gridRxC"))),
            }
        }
    };
    Ok(g)
}

pub fn parse_family(kind: FamilyKind, values: &str, cfg: &RunConfig) -> CliResult<Family> {
    Ok(match kind {
        FamilyKind::Sites => Family::Sites { sizes: parse_list(values, ',', "size")?, n_particles: cfg.physics.n_particles },
        FamilyKind::Particles => Family::Particles { n_sites: cfg.lattice.n, counts: parse_list(values, ',', "count")? },
        FamilyKind::Positions => Family::Positions {
            n_sites: cfg.lattice.n,
            placements: values.split(';').map(|p| parse_list(p, '+', "site")).collect::<CliResult<_>>()?,
        },
        FamilyKind::Shapes => Family::Shapes {
            lattices: values.split(',').map(|s| parse_shape(s, cfg.lattice.n)).collect::<CliResult<_>>()?,
            n_particles: cfg.physics.n_particles,
        },
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepFits {
    pub linear: bool,
    pub saturation: bool,
    pub period: bool,
}

pub fn sweep_settings<'a>(cfg: &RunConfig, frame: Option<&'a WannierFrame>, fits: SweepFits) -> SweepSettings<'a> {
    SweepSettings {
        hopping: cfg.physics.hopping,
        interaction: cfg.physics.interaction,
        policy: cfg.physics.propagator,
        dt: cfg.physics.dt,
        t_max: cfg.physics.t_max,
        w_max_sites: usize::MAX,
        frame,
        w_options: cfg.w_options(),
        saturation_column: cfg.analysis.saturation_column,
        saturation: SaturationOptions::default(),
        period_column: cfg.analysis.period_column,
        eps: cfg.analysis.eps,
        horizon: cfg.analysis.horizon,
        fit_linear: fits.linear,
        fit_saturation: fits.saturation,
        find_period: fits.period,
    }
}

#[derive(Serialize)]
struct SweepSidecar<'a> {
    command: &'static str,
    config: &'a RunConfig,
    family: FamilyKind,
    values: &'a str,
    fits: SweepFits,
    frame_hash: Option<String>,
    rows: &'a [SweepRow],
}

/// Runs a family sweep; per-point failures are kept in the rows.
pub fn run_sweep(
    cfg: &RunConfig,
    kind: FamilyKind,
    values: &str,
    fits: SweepFits,
    workers: usize,
    out: &Path,
) -> CliResult<(Vec<PathBuf>, Vec<SweepRow>)> {
    let family = parse_family(kind, values, cfg)?;
    let points = family.points()?;
    let frame = build_frame(cfg)?;
    let settings = sweep_settings(cfg, frame.as_ref(), fits);
    let rows = sweep(&points, &settings, workers)?;
    let frame_hash = frame.as_ref().map(|f| f.hash());
    let header = format!(
        "family={}\nvalues={values}\nJ={},U={},dt={},t_max={}\nframe={}",
        serde_json::to_value(kind).expect("enum").as_str().unwrap_or_default(),
        cfg.physics.hopping,
        cfg.physics.interaction,
        cfg.physics.dt,
        cfg.physics.t_max,
        frame_hash.as_deref().unwrap_or("none"),
    );
    let csv = out.join("sweep.csv");
    let json = out.join("sweep.json");
    write_atomic(&csv, sweep_csv(&header, &rows).as_bytes())?;
    write_json(
        &json,
        &SweepSidecar { command: "sweep", config: cfg, family: kind, values, fits, frame_hash, rows: &rows },
    )?;
    Ok((vec![csv, json], rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        RunConfig::from_toml_str("[lattice]\nn = 3\n[physics]\nt_max = 5.0\n[frame]\nwindow_x = 2", &[]).unwrap()
    }

    #[test]
    fn labels_are_stable() {
        let g = LatticeGraph::grid(2, 3).unwrap();
        assert_eq!(run_label(&g, &[0, 4]), "grid2x3_n6_N2_s0-4");
    }

    #[test]
    fn family_parsing() {
        let cfg = small_config();
        match parse_family(FamilyKind::Positions, "0;1+2", &cfg).unwrap() {
            Family::Positions { placements, .. } => assert_eq!(placements, vec![vec![0], vec![1, 2]]),
            _ => unreachable!(),
        }
        let cfg16 = RunConfig::from_toml_str("[lattice]\nn = 16", &[]).unwrap();
        match parse_family(FamilyKind::Shapes, "chain,ring,grid4x4", &cfg16).unwrap() {
            Family::Shapes { lattices, .. } => assert_eq!(lattices[2].shape().to_string(), "grid4x4"),
            _ => unreachable!(),
        }
        assert_eq!(parse_family(FamilyKind::Sites, "3,x", &cfg).unwrap_err().exit_code(), 2);
        assert_eq!(parse_family(FamilyKind::Shapes, "hex", &cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn trace_then_analyze() {
        let dir = tempfile::tempdir().unwrap();
        let files = trace(&small_config(), dir.path()).unwrap();
        assert!(files[0].ends_with("trace_chain_n3_N1_s0.csv"));
        let opts = AnalyzeOptions {
            linear: true,
            saturation: true,
            period: true,
            eps: 0.2,
            period_column: Column::SF,
            saturation_column: Column::SF,
        };
        let out = analyze(&files[..1], &opts, dir.path()).unwrap();
        let csv = std::fs::read_to_string(&out[0]).unwrap();
        assert!(csv.lines().any(|l| l.starts_with("3,1,chain,0,")));
        // the sidecar reproduces the run
        let again = RunConfig::load(&files[1], &[]).unwrap();
        assert_eq!(again, small_config());
    }

    #[test]
    fn analyze_names_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml_str("[lattice]\nn = 3\n[physics]\nt_max = 2.0\n[entropy]\nenable_w = false", &[])
            .unwrap();
        let files = trace(&cfg, dir.path()).unwrap();
        let opts = AnalyzeOptions {
            linear: true,
            saturation: false,
            period: false,
            eps: 0.2,
            period_column: Column::SF,
            saturation_column: Column::SF,
        };
        let e = analyze(&files[..1], &opts, dir.path()).unwrap_err();
        assert!(e.to_string().contains("column s_w"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }
}
