use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wentropy_cli::commands::{self, AnalyzeOptions, FamilyKind, SweepFits};
use wentropy_cli::config::{template, RunConfig};
use wentropy_cli::figures::run_figure;
use wentropy_cli::io::resolve_out_dir;
use wentropy_cli::{CliError, CliResult};
use wentropy_core::entropy::Column;

#[derive(Parser)]
#[command(name = "wentropy", version, about = "Hard-core boson quench dynamics with W and F entropies")]
struct Cli {
    /// Worker threads for family runs (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config, or a JSON sidecar from an earlier run.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set physics.dt=0.05`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory; beats WENTROPY_OUT_DIR and `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path, &self.overrides),
            None => RunConfig::from_toml_str("", &self.overrides),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fit {
    Linear,
    Saturation,
    Period,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColumnArg {
    #[value(name = "s_f")]
    SF,
    #[value(name = "s_w")]
    SW,
}

impl From<ColumnArg> for Column {
    fn from(c: ColumnArg) -> Self {
        match c {
            ColumnArg::SF => Column::SF,
            ColumnArg::SW => Column::SW,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one configured system and write its entropy trace.
    Trace(ConfigArgs),
    /// Fit stored traces (linear W-F law, saturation, regression period).
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values = ["linear", "saturation", "period"])]
        fit: Vec<Fit>,
        #[arg(long, default_value_t = wentropy_core::analysis::DEFAULT_EPSILON)]
        eps: f64,
        #[arg(long, value_enum, default_value = "s_w")]
        period_column: ColumnArg,
        #[arg(long, value_enum, default_value = "s_f")]
        saturation_column: ColumnArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the data behind a figure and check its trend.
    Figure {
        /// fig3, fig4, fig5, fig6, fig7, fig9, fig10, fig12, fig13, fig14 or fig11.
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the Wannier frame and write it with its diagnostics.
    FrameBuild(ConfigArgs),
    /// Run a family of configs and tabulate fits and periods.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        family: FamilyKind,
        /// Family values, see `--family` for the syntax.
        #[arg(long)]
        values: String,
        #[arg(long, value_delimiter = ',', default_values = ["saturation", "period"])]
        fit: Vec<Fit>,
    },
    /// Print a config file with every default.
    Template,
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    match cli.command {
        Command::Trace(args) => {
            let cfg = args.load()?;
            if args.dry_run {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let out = resolve_out_dir(args.out.as_deref(), &cfg.output.dir);
            report_files(&commands::trace(&cfg, &out)?);
        }
        Command::Analyze { traces, fit, eps, period_column, saturation_column, out } => {
            let opts = AnalyzeOptions {
                linear: fit.contains(&Fit::Linear),
                saturation: fit.contains(&Fit::Saturation),
                period: fit.contains(&Fit::Period),
                eps,
                period_column: period_column.into(),
                saturation_column: saturation_column.into(),
            };
            let out = resolve_out_dir(out.as_deref(), "out");
            report_files(&commands::analyze(&traces, &opts, &out)?);
        }
        Command::Figure { id, out } => {
            let out = resolve_out_dir(out.as_deref(), "out");
            let report = run_figure(&id, &out, workers)?;
            print!("{}", report.text());
            if !report.passed() {
                let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
                return Err(CliError::Trend(format!("{id}: {}", names.join("; "))));
            }
        }
        Command::FrameBuild(args) => {
            let cfg = args.load()?;
            if args.dry_run {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let out = resolve_out_dir(args.out.as_deref(), &cfg.output.dir);
            report_files(&commands::frame_build(&cfg, &out)?);
        }
        Command::Sweep { config, family, values, fit } => {
            let cfg = config.load()?;
            if config.dry_run {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let fits = SweepFits {
                linear: fit.contains(&Fit::Linear),
                saturation: fit.contains(&Fit::Saturation),
                period: fit.contains(&Fit::Period),
            };
            let out = resolve_out_dir(config.out.as_deref(), &cfg.output.dir);
            let (files, rows) = commands::run_sweep(&cfg, family, &values, fits, workers, &out)?;
            report_files(&files);
            let failed: Vec<String> = rows
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| format!("{} n={} init={:?}: {e}", r.shape, r.n_sites, r.init_sites)))
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Run(failed.join("\n")));
            }
        }
        Command::Template => print!("{}", template()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wentropy: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
