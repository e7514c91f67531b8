//! `rb-e2e`: train, tune and compare end-to-end risk-budgeting portfolios.

mod artifacts;
mod commands;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rb_e2e::Arm;

use crate::config::TrainFlags;

#[derive(Debug, Parser)]
#[command(name = "rb-e2e", version, about = "End-to-end risk-budgeting portfolios")]
pub struct Args {
    /// Add elapsed wall-clock seconds to manifest.json (breaks byte-identical re-runs).
    #[arg(long, global = true)]
    pub record_timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic factor-model price panel.
    Synth(SynthArgs),
    /// Train one network and write its record and wealth paths.
    Train(TrainArgs),
    /// Train a seed cohort per arm and summarise path dispersion.
    Dispersion(DispersionArgs),
    /// Random search over neurons, learning rate and steps.
    Tune(TuneArgs),
    /// Rolling equal-risk-contribution benchmark.
    Benchmark(BenchmarkArgs),
    /// Render Markdown tables from a directory of run outputs.
    Report(ReportArgs),
    /// Tune and run both-arm dispersion cohorts for each loss, then report.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub assets: usize,
    #[arg(long, default_value_t = 2000)]
    pub days: usize,
    #[arg(long, default_value_t = 3)]
    pub factors: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Price CSV: a `date` column followed by one column per ticker.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `unbounded` replaces the floor with machine epsilon.
    #[arg(long)]
    pub arm: Option<Arm>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Also write the solver residuals of the final forward pass.
    #[arg(long)]
    pub solver_trace: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct DispersionArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Cohort size (default 15).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed of the cohort; seeds are consecutive.
    #[arg(long)]
    pub seed_start: Option<u64>,
    /// Repeatable; default is both arms.
    #[arg(long)]
    pub arm: Vec<Arm>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of sampled configurations (default 100).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Seed of the configuration sampler.
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Network initialization seed for every trial.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Range {
    Train,
    Validation,
    Evaluation,
}

#[derive(Debug, clap::Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rebalance: Option<usize>,
    #[arg(long)]
    pub cov_window: Option<usize>,
    #[arg(long, value_enum, default_value_t = Range::Evaluation)]
    pub range: Range,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Defaults to `<in>/report.md`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Search iterations per loss (default 100).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Cohort size (default 15).
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(rb_e2e::Error),
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Output { .. } => 3,
            CliError::Core(e) if e.is_data() => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error [usage]: {m}"),
            CliError::Output { path, source } => write!(f, "error [output]: {}: {source}", path.display()),
            CliError::Core(e) => {
                let tag = match e.stage() {
                    Some(stage) => stage.to_string(),
                    None if e.is_data() => "data".into(),
                    None if e.is_numerical() => "numerical".into(),
                    None => "config".into(),
                };
                write!(f, "error [{tag}]: ")?;
                // Inner stage tags become a context chain.
                let mut cur = e;
                let mut outer = true;
                while let rb_e2e::Error::Stage { stage, context, source } = cur {
                    if !outer {
                        write!(f, "[{stage}] ")?;
                    }
                    write!(f, "{context}: ")?;
                    outer = false;
                    cur = source;
                }
                write!(f, "{cur}")
            }
        }
    }
}

impl From<rb_e2e::Error> for CliError {
    fn from(e: rb_e2e::Error) -> Self {
        CliError::Core(e)
    }
}

fn run(args: &Args) -> Result<(), CliError> {
    match &args.command {
        Command::Synth(a) => commands::synth(args, a),
        Command::Train(a) => commands::train_cmd(args, a),
        Command::Dispersion(a) => commands::dispersion(args, a),
        Command::Tune(a) => commands::tune(args, a).map(|_| ()),
        Command::Benchmark(a) => commands::benchmark(args, a),
        Command::Report(a) => commands::report(a),
        Command::Reproduce(a) => commands::reproduce(args, a),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rb-e2e: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
