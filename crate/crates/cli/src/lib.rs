//! Command-line workflow around `sbp-core`: config, checkpoints, reports and
//! one subcommand per training phase.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sbp_core::gradsuite::{standard_cases, DEFAULT_INSTANCES};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sbp", version, about = "Sample-level bias prediction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON experiment config; defaults apply to every missing field.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed (and the dataset seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct InputArgs {
    /// Dataset file [default: <out>/dataset.json].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Classic checkpoint [default: <out>/classic.json].
    #[arg(long)]
    pub classic: Option<PathBuf>,
    /// BGAN checkpoint [default: <out>/bgan.json].
    #[arg(long)]
    pub bgan: Option<PathBuf>,
}

impl From<InputArgs> for commands::Inputs {
    fn from(a: InputArgs) -> Self {
        Self {
            dataset: a.dataset,
            classic: a.classic,
            bgan: a.bgan,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic long-tailed dataset.
    GenData,
    /// Train and freeze the classic classifier.
    TrainClassic(InputArgs),
    /// Train the bias generator and critic against the frozen classifier.
    TrainBgan(InputArgs),
    /// Score every configured corrector on the test split.
    Evaluate(InputArgs),
    /// Run the full pipeline for each configured seed and summarize.
    Compare,
    /// Finite-difference check of every layer and loss graph.
    Gradcheck {
        /// Randomized instances per case.
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: usize,
    },
}

/// Loads and resolves the effective config for `common`.
pub fn effective_config(common: &Common) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    base.resolve(common.seed, common.out.clone())
}

/// Runs one parsed command, writing progress to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(&cli.common)?;
    writeln!(out, "effective config:\n{}", cfg.to_pretty_json())?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, out).map(drop),
        Command::TrainClassic(a) => commands::train_classic(&cfg, &a.into(), out).map(drop),
        Command::TrainBgan(a) => commands::train_bgan(&cfg, &a.into(), out).map(drop),
        Command::Evaluate(a) => commands::evaluate(&cfg, &a.into(), out).map(drop),
        Command::Compare => commands::compare(&cfg, out).map(drop),
        Command::Gradcheck { instances } => commands::gradcheck(&standard_cases(), instances, cfg.seed, out).map(drop),
    }
}
