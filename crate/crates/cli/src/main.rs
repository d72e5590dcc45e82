//! Privacy-fairness auditing pipeline.
//!
//! Subcommands: gen-data, train, audit, compare, report. Configuration
//! comes from a TOML file; flags override it. Exit codes: 0 success,
//! 2 configuration error, 3 data error, 4 runtime or round failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use fairaudit_core::accountant::AccountantError;
use fairaudit_core::audit::AuditError;
use fairaudit_core::dataio::DataError;
use fairaudit_core::model::ModelError;
use fairaudit_core::stats::StatsError;
use fairaudit_core::train::TrainError;

use config::{ExperimentConfig, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(msg) => CliError::Config(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(msg) => CliError::Config(msg),
            ModelError::Io { .. } | ModelError::Format(_) => CliError::Data(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(msg) => CliError::Config(msg),
            TrainError::Accountant(AccountantError::Calibration { .. }) => {
                CliError::Config(e.to_string())
            }
            TrainError::Accountant(inner) => CliError::Config(inner.to_string()),
            TrainError::Model(inner) => inner.into(),
            TrainError::NonFinite { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<AuditError> for CliError {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::Config(msg) => CliError::Config(msg),
            AuditError::Contract(msg) => CliError::Config(msg),
            AuditError::Round { .. } => CliError::Runtime(e.to_string()),
            AuditError::Io { .. } | AuditError::Format(_) => CliError::Data(e.to_string()),
            AuditError::Model(inner) => inner.into(),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "fairaudit",
    about = "Train classifiers under (group-adaptive) DP-SGD and audit per-group membership-inference risk",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset source: synth, idx, csv, container.
    #[arg(long)]
    dataset: Option<String>,
    /// Subsample to this many records per class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Worker threads (also settable via FAIRAUDIT_WORKERS).
    #[arg(long)]
    workers: Option<usize>,
    /// Audit rounds R.
    #[arg(long)]
    rounds: Option<usize>,
    /// Audit method: ga, gba, looa, alooa.
    #[arg(long)]
    method: Option<String>,
    /// Training algorithm: sgd, dpsgd, dpsgds.
    #[arg(long)]
    algorithm: Option<String>,
    /// Model architecture: lr, mlp, cnn.
    #[arg(long)]
    arch: Option<String>,
    /// Target epsilon (clears any configured noise multiplier).
    #[arg(long)]
    epsilon: Option<f64>,
    /// DP-SGD-S scale bound tau.
    #[arg(long)]
    scale_bound: Option<f64>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            dataset: self.dataset.clone(),
            per_class: self.per_class,
            workers: self.workers,
            rounds: self.rounds,
            method: self.method.clone(),
            algorithm: self.algorithm.clone(),
            arch: self.arch.clone(),
            epsilon: self.epsilon,
            scale_bound: self.scale_bound,
        };
        ExperimentConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured dataset into the output directory.
    GenData(CommonArgs),
    /// Train one model and write its snapshot, iteration log, GRC, and ledger.
    Train(CommonArgs),
    /// Run the configured auditing game and write trace, guesses, and risk report.
    Audit(CommonArgs),
    /// Compare two traces sample-by-sample (mean diffs, Kruskal-Wallis).
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// First trace stem (path without the .csv/.json extension).
        #[arg(long)]
        trace_a: PathBuf,
        /// Second trace stem.
        #[arg(long)]
        trace_b: PathBuf,
    },
    /// Consolidate existing artifacts into a report bundle (no recomputation).
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write per-sample accuracy rows.
        #[arg(long)]
        per_sample: bool,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => commands::cmd_gen_data(&args.load()?),
        Command::Train(args) => commands::cmd_train(&args.load()?),
        Command::Audit(args) => commands::cmd_audit(&args.load()?),
        Command::Compare {
            common,
            trace_a,
            trace_b,
        } => commands::cmd_compare(&common.load()?, &trace_a, &trace_b),
        Command::Report { common, per_sample } => commands::cmd_report(&common.load()?, per_sample),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fairaudit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
