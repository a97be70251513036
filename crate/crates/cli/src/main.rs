mod analyze;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drdid::{Error, Estimator};

#[derive(Parser, Debug)]
#[command(
    name = "drdid",
    version,
    about = "Double-robust difference-in-differences for count outcomes"
)]
struct Cli {
    /// Worker threads for bootstrap and simulation (default: all cores).
    #[arg(long, global = true, env = "DRDID_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate CFD and CMF on a two-period panel.
    Analyze(DataArgs),
    /// Run the estimators on two pre-treatment periods as a parallel-trend check.
    Placebo(DataArgs),
    /// Monte Carlo study over the standard simulation scenarios.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PsPower {
    Auto,
    #[serde(untagged)]
    Order(u32),
}

impl FromStr for PsPower {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(PsPower::Auto);
        }
        match s.parse::<u32>() {
            Ok(l) if (1..=5).contains(&l) => Ok(PsPower::Order(l)),
            _ => Err(format!("expected `auto` or an order in 1..=5, got `{s}`")),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// 0/1 treatment-group column.
    #[arg(long)]
    pub treatment: String,
    /// Outcome column of the earlier period.
    #[arg(long)]
    pub before: String,
    /// Outcome column of the later period.
    #[arg(long)]
    pub after: String,
    /// Covariate columns.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub covariates: Vec<String>,
    /// Unit identifier column.
    #[arg(long)]
    pub id: Option<String>,
    /// Power-series order of continuous covariates in the propensity model.
    #[arg(long, default_value = "auto")]
    pub ps_power: PsPower,
    /// Covariates entered on the log scale.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub log_cols: Vec<String>,
    /// Center and scale continuous covariates before the power expansion.
    #[arg(long)]
    pub standardize: bool,
    /// Estimators to run.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "direct,regression,weighting,double_robust"
    )]
    pub estimators: Vec<Estimator>,
    /// Bootstrap replicates; 0 reports point estimates only.
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report destination (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write per-unit propensity scores and ATT weights to this CSV.
    #[arg(long)]
    pub dump_weights: Option<PathBuf>,
    /// Write every bootstrap replicate's CFD and CMF to this CSV.
    #[arg(long)]
    pub dump_bootstrap: Option<PathBuf>,
    /// Write the balance table to this CSV.
    #[arg(long)]
    pub balance_csv: Option<PathBuf>,
    /// Write the propensity histograms to this CSV.
    #[arg(long)]
    pub overlap_csv: Option<PathBuf>,
    /// Histogram bins over [0, 1].
    #[arg(long, default_value_t = drdid::diagnostics::DEFAULT_OVERLAP_BINS)]
    pub bins: usize,
    /// Drop rows with missing values instead of failing.
    #[arg(long)]
    pub lenient_missing: bool,
    /// Add wall-clock timings to the report.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// TOML file with study settings and DGP overrides; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `all` or a comma-separated list of scenario labels (e.g. DR,DR-po).
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<String>>,
    /// Units per simulated dataset.
    #[arg(long)]
    pub n: Option<usize>,
    /// Treated after-period counts follow the no-effect mean.
    #[arg(long)]
    pub placebo: bool,
    /// Draws for the Monte Carlo check of the true effects.
    #[arg(long, default_value_t = 10_000_000)]
    pub truth_draws: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write per-replicate estimates and intervals to this CSV.
    #[arg(long)]
    pub dump_replicates: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

/// Validation problems exit with 2, fitting failures with 3.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::SingularInformation(_)
        | Error::SeparationDetected
        | Error::NonConvergence { .. }
        | Error::MissingNuisance(_)
        | Error::TooManyFailures { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Analyze(args) => analyze::run(args, analyze::Mode::Analyze),
        Command::Placebo(args) => analyze::run(args, analyze::Mode::Placebo),
        Command::Simulate(args) => simulate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
