//! `vhl`: reproducible experiment runner for variance-Hawkes processes.
//!
//! Every subcommand writes its data files plus `manifest.json` into `--out`.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "vhl",
    version,
    about = "Variance-Hawkes simulation and verification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

/// Model flags that must be given explicitly.
#[derive(Debug, Args, Serialize)]
pub struct RequiredModel {
    #[arg(long)]
    pub v: f64,
    /// Initial intensity (defaults to v).
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub beta: f64,
}

/// Model flags with defaults; `v = 1, α = 1, β = 2` unless overridden.
#[derive(Debug, Args, Serialize)]
pub struct Model {
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
}

/// Model flags defaulting to the Itô experiment parameters.
#[derive(Debug, Args, Serialize)]
pub struct ItoModel {
    #[arg(long, default_value_t = 5000.0)]
    pub v: f64,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long, default_value_t = 600.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 800.0)]
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeKind {
    ClusteredOu,
    StochasticMeanOu,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: RequiredModel,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1024)]
    pub res: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of independent paths (files are suffixed by path index).
    #[arg(long, default_value_t = 1)]
    pub n_paths: usize,
    /// Also integrate a clustered SDE driven by the same subordinator.
    #[arg(long, value_enum)]
    pub sde: Option<SdeKind>,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub s0: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub model: Model,
    /// Last time of the table.
    #[arg(long = "T", default_value_t = 2.0)]
    pub horizon: f64,
    /// Spacing of the time grid.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// RK4 step of the ODE oracle.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyItoArgs {
    #[command(flatten)]
    pub model: ItoModel,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1 << 20)]
    pub res: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, alias = "n-paths", default_value_t = 16)]
    pub n_runs: usize,
    /// Cap on rows per trajectory/error file (grid is subsampled evenly).
    #[arg(long, default_value_t = 4097)]
    pub max_points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ConjectureArgs {
    #[command(flatten)]
    pub model: Model,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draws per side in each panel.
    #[arg(long, alias = "n-paths", default_value_t = 1 << 14)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 16)]
    pub panels: usize,
    /// CSV with columns v, alpha, beta (and optionally v0, T); one panel per
    /// row, replacing the model flags and --panels.
    #[arg(long)]
    pub param_grid: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Price CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "date")]
    pub date_column: String,
    #[arg(long, default_value = "close")]
    pub close_column: String,
    #[arg(long)]
    pub forward_fill: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [400.0, 450.0])]
    pub grid_v: Vec<f64>,
    /// Initial intensities; when omitted each point uses v + 1.
    #[arg(long, value_delimiter = ',')]
    pub grid_v0: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [700.0])]
    pub grid_alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [800.0])]
    pub grid_beta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0])]
    pub grid_a: Vec<f64>,
    /// Scale constant b (default 1/e).
    #[arg(long, default_value_t = (-1.0f64).exp())]
    pub b: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    /// Model σ̂ (defaults to the sample standard deviation of the returns).
    #[arg(long)]
    pub sigma_hat: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub n_sim: usize,
    #[arg(long, default_value_t = 1)]
    pub steps_per_path: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct QqArgs {
    /// CSV holding the sample in one column.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "volume")]
    pub column: String,
    #[arg(long, default_value_t = 99)]
    pub n_quantiles: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ProfileArgs {
    /// Per-minute volume CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "timestamp")]
    pub timestamp_column: String,
    #[arg(long, default_value = "volume")]
    pub volume_column: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate Hawkes arrivals and the variance-Hawkes path B(N_t).
    Simulate {
        #[command(flatten)]
        args: SimulateArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Moment tables: closed forms, ODE oracle, discrepancies and generator limits.
    Moments {
        #[command(flatten)]
        args: MomentsArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Batch comparison of B² with its Itô expansion.
    VerifyIto {
        #[command(flatten)]
        args: VerifyItoArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Panels comparing B(N_T) with √N_T·Z.
    Conjecture {
        #[command(flatten)]
        args: ConjectureArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Grid-search fit of the clustered Gaussian model to price log returns.
    Fit {
        #[command(flatten)]
        args: FitArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical quantiles against a fitted exponential law.
    Qq {
        #[command(flatten)]
        args: QqArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Mean volume per minute of the trading day.
    Profile {
        #[command(flatten)]
        args: ProfileArgs,
        #[command(flatten)]
        common: Common,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("VHL_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("VHL_THREADS must be a positive integer, got '{raw}'"))?;
        if n == 0 {
            anyhow::bail!("VHL_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { args, common } => commands::simulate(&args, &common),
        Command::Moments { args, common } => commands::moments(&args, &common),
        Command::VerifyIto { args, common } => commands::verify_ito(&args, &common),
        Command::Conjecture { args, common } => commands::conjecture(&args, &common),
        Command::Fit { args, common } => commands::fit(&args, &common),
        Command::Qq { args, common } => commands::qq(&args, &common),
        Command::Profile { args, common } => commands::profile(&args, &common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("vhl: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
