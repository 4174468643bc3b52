//! TOML run configuration with `section.key=value` overrides.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wentropy_core::dynamics::PropagatorPolicy;
use wentropy_core::entropy::{Column, WMethod, WOptions};
use wentropy_core::lattice::LatticeGraph;
use wentropy_core::wannier::{FrameParams, PhaseGrid};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    #[default]
    Chain,
    Ring,
    Grid,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub shape: ShapeKind,
    /// Site count for chain, ring and custom lattices.
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    /// Custom edge list.
    pub edges: Vec<[usize; 2]>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { shape: ShapeKind::Chain, n: 5, rows: 0, cols: 0, edges: Vec::new() }
    }
}

impl LatticeConfig {
    pub fn n_sites(&self) -> usize {
        match self.shape {
            ShapeKind::Grid => self.rows * self.cols,
            _ => self.n,
        }
    }

    pub fn build(&self) -> CliResult<LatticeGraph> {
        let g = match self.shape {
            ShapeKind::Chain => LatticeGraph::chain(self.n)?,
            ShapeKind::Ring => LatticeGraph::ring(self.n)?,
            ShapeKind::Grid => LatticeGraph::grid(self.rows, self.cols)?,
            ShapeKind::Custom => {
                let pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
                LatticeGraph::custom(self.n, &pairs)?
            }
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub n_particles: usize,
    /// Empty means the first `n_particles` sites.
    pub init_sites: Vec<usize>,
    pub hopping: f64,
    pub interaction: f64,
    pub dt: f64,
    pub t_max: f64,
    pub propagator: PropagatorPolicy,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            n_particles: 1,
            init_sites: Vec::new(),
            hopping: 1.0,
            interaction: 0.0,
            dt: 0.1,
            t_max: 50.0,
            propagator: PropagatorPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub enable_w: bool,
    pub method: WMethod,
    pub theta: f64,
    pub cost_budget: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        let w = WOptions::default();
        EntropyConfig { enable_w: true, method: w.method, theta: w.prune_threshold, cost_budget: w.cost_budget }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub eps: f64,
    pub horizon: f64,
    pub period_column: Column,
    pub saturation_column: Column,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            eps: wentropy_core::analysis::DEFAULT_EPSILON,
            horizon: 1e4,
            period_column: Column::SW,
            saturation_column: Column::SF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub physics: PhysicsConfig,
    pub frame: FrameParams,
    pub entropy: EntropyConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Reads a TOML config, or the `config` object of a JSON sidecar.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table = if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            toml::Table::try_from(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Self::from_table(table, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> CliResult<Self> {
        let table = text.parse::<toml::Table>().map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_table(table, overrides)
    }

    pub fn from_table(mut table: toml::Table, overrides: &[String]) -> CliResult<Self> {
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.resolve()
    }

    /// Fills defaults that depend on other keys and checks the invariants.
    pub fn resolve(mut self) -> CliResult<Self> {
        let n = self.lattice.n_sites();
        let p = &mut self.physics;
        if p.init_sites.is_empty() {
            p.init_sites = (0..p.n_particles).collect();
        }
        if p.init_sites.len() != p.n_particles {
            return Err(CliError::Config(format!(
                "physics.init_sites has {} entries but n_particles = {}",
                p.init_sites.len(),
                p.n_particles
            )));
        }
        if p.init_sites.iter().collect::<BTreeSet<_>>().len() != p.init_sites.len() {
            return Err(CliError::Config(format!("physics.init_sites {:?} has repeated sites", p.init_sites)));
        }
        if let Some(&s) = p.init_sites.iter().find(|&&s| s >= n) {
            return Err(CliError::Config(format!("physics.init_sites: site {s} outside lattice of {n} sites")));
        }
        let positive = [
            ("physics.dt", p.dt),
            ("physics.hopping", p.hopping.abs()),
            ("analysis.eps", self.analysis.eps),
            ("analysis.horizon", self.analysis.horizon),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{key} must be positive and finite, got {v}")));
            }
        }
        if !(p.t_max >= 0.0 && p.t_max.is_finite()) || !p.interaction.is_finite() {
            return Err(CliError::Config("physics.t_max and physics.interaction must be finite, t_max >= 0".into()));
        }
        if !(self.entropy.theta >= 0.0) || !(self.entropy.cost_budget > 0.0) {
            return Err(CliError::Config("entropy.theta must be >= 0 and entropy.cost_budget > 0".into()));
        }
        if self.entropy.enable_w {
            PhaseGrid::new(self.frame)?;
        }
        Ok(self)
    }

    pub fn n_steps(&self) -> usize {
        (self.physics.t_max / self.physics.dt).round() as usize
    }

    pub fn w_options(&self) -> WOptions {
        WOptions { method: self.entropy.method, prune_threshold: self.entropy.theta, cost_budget: self.entropy.cost_budget }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form section.key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{spec}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn column_name(c: Column) -> &'static str {
    match c {
        Column::SF => "s_f",
        Column::SW => "s_w",
    }
}

/// Commented config file listing every key with its default.
pub fn template() -> String {
    let d = RunConfig::default();
    let f = d.frame;
    let mut s = String::new();
    let _ = writeln!(s, "# wentropy run configuration; every key is optional\n");
    let _ = writeln!(s, "[lattice]");
    let _ = writeln!(s, "# chain | ring | grid | custom");
    let _ = writeln!(s, "shape = \"chain\"");
    let _ = writeln!(s, "# sites for chain, ring and custom");
    let _ = writeln!(s, "n = {}", d.lattice.n);
    let _ = writeln!(s, "# grid dimensions");
    let _ = writeln!(s, "rows = {}\ncols = {}", d.lattice.rows, d.lattice.cols);
    let _ = writeln!(s, "# custom edges, e.g. [[0, 1], [1, 2]]");
    let _ = writeln!(s, "edges = []\n");
    let _ = writeln!(s, "[physics]");
    let _ = writeln!(s, "n_particles = {}", d.physics.n_particles);
    let _ = writeln!(s, "# occupied sites at t = 0; empty means 0..n_particles");
    let _ = writeln!(s, "init_sites = []");
    let _ = writeln!(s, "# J and U");
    let _ = writeln!(s, "hopping = {:?}\ninteraction = {:?}", d.physics.hopping, d.physics.interaction);
    let _ = writeln!(s, "# sampling step and trace length, in units of 1/J");
    let _ = writeln!(s, "dt = {:?}\nt_max = {:?}", d.physics.dt, d.physics.t_max);
    let _ = writeln!(s, "# auto | spectral | krylov");
    let _ = writeln!(s, "propagator = \"auto\"\n");
    let _ = writeln!(s, "[frame]");
    let _ = writeln!(s, "# cell size; x0 * k0 must equal 2 pi");
    let _ = writeln!(s, "x0 = {:?}\nk0 = {:?}", f.x0, f.k0);
    let _ = writeln!(s, "# Gaussian packet width");
    let _ = writeln!(s, "zeta = {:?}", f.zeta);
    let _ = writeln!(s, "# cells span [-window, window] on each axis");
    let _ = writeln!(s, "window_x = {}\nwindow_k = {}", f.window_x, f.window_k);
    let _ = writeln!(s, "# real-space grid spacing and half-width");
    let _ = writeln!(s, "dx = {:?}\nextent = {:?}", f.dx, f.extent);
    let _ = writeln!(s, "# length of the local oscillator levels");
    let _ = writeln!(s, "oscillator_length = {:?}", f.oscillator_length);
    let _ = writeln!(s, "# largest level weight allowed outside the window");
    let _ = writeln!(s, "leakage_tolerance = {:?}\n", f.leakage_tolerance);
    let _ = writeln!(s, "[entropy]");
    let _ = writeln!(s, "enable_w = {}", d.entropy.enable_w);
    let _ = writeln!(s, "# factorized | exact");
    let _ = writeln!(s, "method = \"{}\"", d.entropy.method);
    let _ = writeln!(s, "# prune branches lighter than theta");
    let _ = writeln!(s, "theta = {:e}", d.entropy.theta);
    let _ = writeln!(s, "cost_budget = {:e}\n", d.entropy.cost_budget);
    let _ = writeln!(s, "[analysis]");
    let _ = writeln!(s, "# regression threshold, in nats");
    let _ = writeln!(s, "eps = {:?}", d.analysis.eps);
    let _ = writeln!(s, "# longest time searched for the regression period");
    let _ = writeln!(s, "horizon = {:?}", d.analysis.horizon);
    let _ = writeln!(s, "# s_f | s_w");
    let _ = writeln!(s, "period_column = \"{}\"", column_name(d.analysis.period_column));
    let _ = writeln!(s, "saturation_column = \"{}\"\n", column_name(d.analysis.saturation_column));
    let _ = writeln!(s, "[output]");
    let _ = writeln!(s, "# overridden by WENTROPY_OUT_DIR and --out");
    let _ = writeln!(s, "dir = \"{}\"", d.output.dir);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_matches_defaults() {
        let parsed = RunConfig::from_toml_str(&template(), &[]).unwrap();
        assert_eq!(parsed, RunConfig::default().resolve().unwrap());
        assert_eq!(parsed.physics.init_sites, vec![0]);
    }

    #[test]
    fn overrides_apply_to_nested_keys() {
        let cfg = RunConfig::from_toml_str(
            "[lattice]\nn = 4\n",
            &["physics.n_particles=2".into(), "entropy.method=exact".into(), "frame.zeta = 0.4".into()],
        )
        .unwrap();
        assert_eq!(cfg.lattice.n, 4);
        assert_eq!(cfg.physics.init_sites, vec![0, 1]);
        assert_eq!(cfg.entropy.method, WMethod::Exact);
        assert_eq!(cfg.frame.zeta, 0.4);
        assert!(RunConfig::from_toml_str("", &["physics".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["lattice.n.x=1".into()]).is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            "[physics]\nn_particles = 2\ninit_sites = [1, 1]",
            "[physics]\nn_particles = 2\ninit_sites = [1]",
            "[physics]\ninit_sites = [7]",
            "[physics]\ndt = 0.0",
            "[frame]\nk0 = 3.0",
            "[lattice]\nsize = 3",
            "[analysis]\nperiod_column = \"s_x\"",
        ];
        for text in bad {
            let e = RunConfig::from_toml_str(text, &[]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
        // frame checks are skipped when W is off
        RunConfig::from_toml_str("[frame]\nk0 = 3.0\n[entropy]\nenable_w = false", &[]).unwrap();
    }

    #[test]
    fn json_sidecar_round_trip() {
        let cfg = RunConfig::from_toml_str("[lattice]\nshape = \"grid\"\nrows = 2\ncols = 3", &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let json = serde_json::json!({ "command": "trace", "config": cfg });
        std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap()).unwrap();
        assert_eq!(RunConfig::load(&path, &[]).unwrap(), cfg);
        let toml_path = dir.path().join("run.toml");
        std::fs::write(&toml_path, cfg.to_toml()).unwrap();
        assert_eq!(RunConfig::load(&toml_path, &[]).unwrap(), cfg);
        assert_eq!(cfg.lattice.build().unwrap().n_sites(), 6);
    }
}
