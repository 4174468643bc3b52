//! Canned run families that regenerate the data behind each figure and
//! check its qualitative trend.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use wentropy_core::analysis::{fit_linear, sweep, sweep_csv, SaturationOptions, SweepPoint, SweepRow, SweepSettings};
use wentropy_core::dynamics::PropagatorPolicy;
use wentropy_core::entropy::{Column, EntropyTrace, WOptions};
use wentropy_core::lattice::LatticeGraph;
use wentropy_core::pipeline::{run_trace, System, WSetup};
use wentropy_core::wannier::{FrameParams, WannierFrame};

use crate::commands::{analyze_trace, AnalyzeOptions};
use crate::error::{CliError, CliResult};
use crate::io::{write_atomic, write_json};

pub const FIGURE_IDS: [&str; 11] =
    ["fig3", "fig4", "fig5", "fig6", "fig7", "fig9", "fig10", "fig12", "fig13", "fig14", "fig11"];

pub const DT: f64 = 0.1;
pub const T_MAX: f64 = 50.0;
pub const EPS: f64 = 0.2;
pub const PERIOD_HORIZON: f64 = 1e4;
pub const SHAPE_HORIZON: f64 = 1e6;
/// Largest `|Δk|`, `|Δb|` and `|Δmax S_w|` accepted as "the same" across initial positions.
pub const POSITION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureReport {
    pub id: String,
    pub checks: Vec<TrendCheck>,
    pub files: Vec<String>,
}

impl FigureReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&TrendCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{} {} {}: {}", self.id, if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

fn check(name: &str, passed: bool, detail: String) -> TrendCheck {
    TrendCheck { name: name.to_string(), passed, detail }
}

pub fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn leftmost(n_sites: usize, n_particles: usize) -> SweepPoint {
    SweepPoint { graph: LatticeGraph::chain(n_sites).expect("canned chain"), init_sites: (0..n_particles).collect() }
}

pub fn chain_lengths() -> Vec<SweepPoint> {
    (3..=6).map(|n| leftmost(n, 1)).collect()
}

pub fn particle_counts() -> Vec<SweepPoint> {
    (1..=4).map(|c| leftmost(5, c)).collect()
}

pub fn positions() -> Vec<SweepPoint> {
    (0..3).map(|s| SweepPoint { graph: LatticeGraph::chain(5).expect("canned chain"), init_sites: vec![s] }).collect()
}

pub fn canned_frame() -> CliResult<WannierFrame> {
    Ok(WannierFrame::build(FrameParams::default())?)
}

fn pool(workers: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// U = 0 traces over `[0, T_MAX]`, in point order.
pub fn trace_family(points: &[SweepPoint], frame: Option<&WannierFrame>, workers: usize) -> CliResult<Vec<EntropyTrace>> {
    let steps = (T_MAX / DT).round() as usize;
    let setup = frame.map(|f| WSetup { frame: f, options: WOptions::default() });
    let run = |p: &SweepPoint| -> CliResult<EntropyTrace> {
        let system = System::build(p.graph.clone(), &p.init_sites, 1.0, 0.0, PropagatorPolicy::Auto)?;
        Ok(run_trace(&system, DT, steps, setup.as_ref())?)
    };
    pool(workers)?.install(|| points.par_iter().map(run).collect())
}

fn period_settings(frame: Option<&WannierFrame>, column: Column, horizon: f64) -> SweepSettings<'_> {
    SweepSettings {
        hopping: 1.0,
        interaction: 0.0,
        policy: PropagatorPolicy::Auto,
        dt: DT,
        t_max: T_MAX,
        w_max_sites: 8,
        frame,
        w_options: WOptions::default(),
        saturation_column: Column::SF,
        saturation: SaturationOptions::default(),
        period_column: column,
        eps: EPS,
        horizon,
        fit_linear: false,
        fit_saturation: false,
        find_period: true,
    }
}

pub const LINEAR_FIT: AnalyzeOptions = AnalyzeOptions {
    linear: true,
    saturation: false,
    period: false,
    eps: EPS,
    period_column: Column::SW,
    saturation_column: Column::SF,
};

pub const SATURATION_FIT: AnalyzeOptions = AnalyzeOptions { linear: false, saturation: true, ..LINEAR_FIT };

pub fn fit_rows(traces: &[EntropyTrace], opts: &AnalyzeOptions) -> CliResult<Vec<SweepRow>> {
    traces.iter().map(|t| analyze_trace(t, Path::new("<memory>"), opts)).collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceSummary {
    pub s_w_initial: f64,
    pub s_w_min: f64,
    pub s_w_max: f64,
    pub s_f_max: f64,
}

pub fn summarize(trace: &EntropyTrace) -> TraceSummary {
    let sw = trace.column(Column::SW).unwrap_or(&[]);
    TraceSummary {
        s_w_initial: sw.first().copied().unwrap_or(f64::NAN),
        s_w_min: sw.iter().copied().fold(f64::INFINITY, f64::min),
        s_w_max: sw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        s_f_max: trace.s_f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

struct Bundle<'a> {
    id: &'a str,
    dir: PathBuf,
    header: String,
    files: Vec<String>,
}

impl<'a> Bundle<'a> {
    fn new(id: &'a str, out: &Path, frame: Option<&WannierFrame>) -> Self {
        let header = format!(
            "figure={id}\nJ=1,U=0,dt={DT},eps={EPS}\nframe={}",
            frame.map(|f| f.hash()).unwrap_or_else(|| "none".into())
        );
        Bundle { id, dir: out.join(id), header, files: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.files.push(format!("{}/{name}", self.id));
        Ok(())
    }

    fn traces(&mut self, traces: &[EntropyTrace]) -> CliResult<()> {
        for t in traces {
            let g = &t.meta;
            let sites: Vec<String> = g.init_sites.iter().map(|s| s.to_string()).collect();
            let name = format!("trace_{}_n{}_N{}_s{}.csv", g.shape, g.n_sites, g.n_particles, sites.join("-"));
            self.write(&name, &t.to_csv())?;
        }
        Ok(())
    }

    fn summary(&mut self, traces: &[EntropyTrace]) -> CliResult<Vec<TraceSummary>> {
        let mut s = String::new();
        for line in self.header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("n,N,shape,init_sites,s_w_initial,s_w_min,s_w_max,s_f_max\n");
        let mut out = Vec::new();
        for t in traces {
            let m = &t.meta;
            let sum = summarize(t);
            let sites: Vec<String> = m.init_sites.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                m.n_sites,
                m.n_particles,
                m.shape,
                sites.join(";"),
                sum.s_w_initial,
                sum.s_w_min,
                sum.s_w_max,
                sum.s_f_max
            );
            out.push(sum);
        }
        self.write("summary.csv", &s)?;
        Ok(out)
    }

    fn rows(&mut self, name: &str, rows: &[SweepRow]) -> CliResult<()> {
        let csv = sweep_csv(&self.header, rows);
        self.write(name, &csv)
    }

    fn finish(mut self, checks: Vec<TrendCheck>) -> CliResult<FigureReport> {
        let mut report = FigureReport { id: self.id.to_string(), checks, files: Vec::new() };
        self.write("trends.txt", &report.text())?;
        self.files.push(format!("{}/report.json", self.id));
        report.files = self.files;
        write_json(&self.dir.join("report.json"), &report)?;
        Ok(report)
    }
}

fn row_error(rows: &[SweepRow]) -> CliResult<()> {
    match rows.iter().find_map(|r| r.error.as_ref().map(|e| (r, e))) {
        Some((r, e)) => Err(CliError::Run(format!("{} n={} init={:?}: {e}", r.shape, r.n_sites, r.init_sites))),
        None => Ok(()),
    }
}

fn linear_params(rows: &[SweepRow]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let l: Vec<_> = rows.iter().map(|r| r.linear.expect("linear fit")).collect();
    (l.iter().map(|f| f.k).collect(), l.iter().map(|f| f.b).collect(), l.iter().map(|f| f.r2).collect())
}

fn max_spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

fn periods(rows: &[SweepRow]) -> Vec<Option<f64>> {
    rows.iter().map(|r| r.period.and_then(|p| p.period)).collect()
}

fn fmt_periods(p: &[Option<f64>]) -> String {
    let items: Vec<String> = p.iter().map(|x| x.map(|v| format!("{v:.1}")).unwrap_or_else(|| "none".into())).collect();
    format!("[{}]", items.join(", "))
}

/// Runs one figure family and writes its bundle under `out/<id>/`.
pub fn run_figure(id: &str, out: &Path, workers: usize) -> CliResult<FigureReport> {
    if !FIGURE_IDS.contains(&id) {
        return Err(CliError::Config(format!("unknown figure `{id}`; expected one of {}", FIGURE_IDS.join(", "))));
    }
    let needs_frame = !matches!(id, "fig13" | "fig11");
    let frame = if needs_frame { Some(canned_frame()?) } else { None };
    let mut b = Bundle::new(id, out, frame.as_ref());
    let mut checks = Vec::new();
    match id {
        "fig3" | "fig7" | "fig10" => {
            let points = match id {
                "fig3" => chain_lengths(),
                "fig7" => particle_counts(),
                _ => positions(),
            };
            let traces = trace_family(&points, frame.as_ref(), workers)?;
            b.traces(&traces)?;
            let s = b.summary(&traces)?;
            let min: Vec<f64> = s.iter().map(|x| x.s_w_min).collect();
            let max: Vec<f64> = s.iter().map(|x| x.s_w_max).collect();
            let init: Vec<f64> = s.iter().map(|x| x.s_w_initial).collect();
            match id {
                "fig3" => {
                    checks.push(check("max S_w strictly increasing in n", strictly_increasing(&max), list(&max)));
                    checks.push(check("min S_w strictly increasing in n", strictly_increasing(&min), list(&min)));
                }
                "fig7" => {
                    checks.push(check("initial S_w strictly increasing in N", strictly_increasing(&init), list(&init)));
                }
                _ => {
                    let (dmin, dmax) = (max_spread(&min), max_spread(&max));
                    checks.push(check(
                        "min S_w equal across positions",
                        dmin < POSITION_TOLERANCE,
                        format!("{} spread {dmin:.2e}", list(&min)),
                    ));
                    checks.push(check(
                        "max S_w equal across positions",
                        dmax < POSITION_TOLERANCE,
                        format!("{} spread {dmax:.2e}", list(&max)),
                    ));
                }
            }
        }
        "fig4" | "fig5" | "fig6" | "fig9" | "fig12" => {
            let points = match id {
                "fig9" => particle_counts(),
                "fig12" => positions(),
                _ => chain_lengths(),
            };
            let traces = trace_family(&points, frame.as_ref(), workers)?;
            if id == "fig4" {
                b.traces(&traces)?;
            }
            let rows = fit_rows(&traces, &LINEAR_FIT)?;
            b.rows("fits.csv", &rows)?;
            let (k, bs, r2) = linear_params(&rows);
            match id {
                "fig4" => {
                    let ok = r2.iter().all(|&r| r > 0.9);
                    checks.push(check("linear fit r2 > 0.9 for every n", ok, list(&r2)));
                }
                "fig5" => {
                    let ns: Vec<f64> = rows.iter().map(|r| r.n_sites as f64).collect();
                    let line = fit_linear(&ns, &bs)?;
                    checks.push(check("b strictly increasing in n", strictly_increasing(&bs), list(&bs)));
                    checks.push(check("b > 0", bs.iter().all(|&x| x > 0.0), list(&bs)));
                    checks.push(check(
                        "b linear in n (r2 > 0.95)",
                        line.r2 > 0.95,
                        format!("slope {:.4}, r2 {:.4}", line.k, line.r2),
                    ));
                }
                "fig6" => {
                    checks.push(check("k strictly decreasing in n", strictly_decreasing(&k), list(&k)));
                }
                "fig9" => {
                    let db: Vec<f64> = bs.windows(2).map(|w| w[1] - w[0]).collect();
                    checks.push(check("k strictly decreasing in N", strictly_decreasing(&k), list(&k)));
                    checks.push(check("b strictly increasing in N", strictly_increasing(&bs), list(&bs)));
                    checks.push(check("b increments shrinking in N", strictly_decreasing(&db), list(&db)));
                }
                _ => {
                    let (dk, db) = (max_spread(&k), max_spread(&bs));
                    checks.push(check("|dk| < 0.05 across positions", dk < POSITION_TOLERANCE, format!("k {} spread {dk:.4}", list(&k))));
                    checks.push(check("|db| < 0.05 across positions", db < POSITION_TOLERANCE, format!("b {} spread {db:.4}", list(&bs))));
                }
            }
        }
        "fig13" => {
            let points = vec![
                leftmost(16, 4),
                leftmost(18, 6),
                SweepPoint { graph: LatticeGraph::grid(4, 4)?, init_sites: (0..4).collect() },
                leftmost(6, 1),
            ];
            let traces = trace_family(&points, None, workers)?;
            b.traces(&traces)?;
            let rows = fit_rows(&traces, &SATURATION_FIT)?;
            b.rows("fits.csv", &rows)?;
            let r2: Vec<f64> = rows.iter().map(|r| r.saturation.expect("saturation fit").r2).collect();
            checks.push(check("r2(chain16, N=4) > 0.9", r2[0] > 0.9, format!("{:.4}", r2[0])));
            checks.push(check(
                "r2(chain16, N=4) > r2(chain6, N=1)",
                r2[0] > r2[3],
                format!("{:.4} vs {:.4}", r2[0], r2[3]),
            ));
        }
        "fig14" => {
            let mut points: Vec<SweepPoint> = (3..=8).map(|n| leftmost(n, 1)).collect();
            points.push(leftmost(5, 2));
            let settings = period_settings(frame.as_ref(), Column::SW, PERIOD_HORIZON);
            let rows = sweep(&points, &settings, workers)?;
            row_error(&rows)?;
            b.rows("periods.csv", &rows)?;
            let p = periods(&rows);
            let single = &p[..6];
            let all_found = single.iter().all(|x| x.is_some());
            let values: Vec<f64> = single.iter().flatten().copied().collect();
            checks.push(check(
                "T strictly increasing for n = 3..8, N = 1",
                all_found && strictly_increasing(&values),
                fmt_periods(single),
            ));
            checks.push(check(
                "n = 5, N = 2 not found within 1e4",
                p[6].is_none(),
                format!("{} ({:?})", fmt_periods(&p[6..]), rows[6].period.map(|r| r.outcome)),
            ));
        }
        "fig11" => {
            let n = 16;
            let lattices = [LatticeGraph::grid(4, 4)?, LatticeGraph::ring(n)?, LatticeGraph::chain(n)?];
            let points: Vec<SweepPoint> =
                lattices.into_iter().map(|graph| SweepPoint { graph, init_sites: vec![0] }).collect();
            let settings = period_settings(None, Column::SF, SHAPE_HORIZON);
            let rows = sweep(&points, &settings, workers)?;
            row_error(&rows)?;
            b.rows("periods.csv", &rows)?;
            let p = periods(&rows);
            let ok = p.iter().all(|x| x.is_some()) && strictly_increasing(&p.iter().flatten().copied().collect::<Vec<_>>());
            checks.push(check("T(grid4x4) < T(ring) < T(chain) at 16 sites", ok, fmt_periods(&p)));
        }
        _ => unreachable!("checked above"),
    }
    b.finish(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_helpers() {
        assert!(strictly_increasing(&[1.0, 2.0, 3.0]));
        assert!(!strictly_increasing(&[1.0, 1.0]));
        assert!(strictly_decreasing(&[3.0, 2.0]));
        assert!(strictly_increasing(&[]));
    }

    #[test]
    fn unknown_figure_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_figure("fig8", dir.path(), 1).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn report_text_has_one_line_per_check() {
        let r = FigureReport {
            id: "figX".into(),
            checks: vec![check("a", true, "1".into()), check("b", false, "2".into())],
            files: vec![],
        };
        assert_eq!(r.text(), "figX PASS a: 1\nfigX FAIL b: 2\n");
        assert!(!r.passed());
        assert_eq!(r.failures().len(), 1);
    }
}
