//! `gaat`: train, sweep, benchmark and residual-tracking runs from a TOML
//! configuration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "gaat", version, about = "Adversarial training with gradient approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics, checkpoints and a summary line.
    Train(Common),
    /// Evaluate a checkpoint under exact PGD over a (steps, eps) grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: `<out>/best.ckpt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated PGD step counts.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Comma-separated perturbation budgets.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Time RAT and GAAT adversary generation on one batch.
    Bench(Common),
    /// Train while logging the second-order residual for several PGD step counts.
    Residual(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Zero all wall-clock columns so outputs are byte-reproducible.
    #[arg(long)]
    pub deterministic_output: bool,
    /// No pixel clamping, plain SGD without momentum or weight decay.
    #[arg(long)]
    pub paper_literal: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum PrecisionArg {
    F32,
    F64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => commands::train(&c),
        Command::Sweep {
            common,
            checkpoint,
            steps,
            eps,
        } => commands::sweep(&common, checkpoint, steps, eps),
        Command::Bench(c) => commands::bench(&c),
        Command::Residual(c) => commands::residual(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
