// SPDX-License-Identifier: Apache-2.0

//! `bnn-bet`: train binarized networks, sweep bit error rates, report bit
//! error tolerance and check the flip bound.
//!
//! Exit status: 0 success, 1 other failure, 2 configuration error, 3 I/O
//! error, 4 verification failure.

mod commands;
mod config;
mod data_spec;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::data_spec::DataSpec;
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "bnn-bet",
    version,
    about = "Bit error tolerance of binarized neural networks",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write its checkpoint, log and manifest.
    Train(TrainArgs),
    /// Accuracy under persistent weight bit flips over a grid of rates.
    Sweep(SweepArgs),
    /// Bit error tolerance T^b of a checkpoint on a dataset.
    Tolerance(ToleranceArgs),
    /// Brute-force check of the flip bound on random neurons.
    VerifyTheorem(VerifyArgs),
    /// Print a run manifest, or its settings as a config file.
    ShowManifest(ShowArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// fashion-fcnn, fashion-cnn, cifar10-cnn, tiny-fcnn or tiny-cnn.
    #[arg(long)]
    pub preset: Option<String>,
    /// Width multiplier, e.g. 0.125 or 1/8.
    #[arg(long)]
    pub width_scale: Option<String>,
    /// synth:two-gaussians, synth:checkerboard, fashion:DIR or cifar10:DIR.
    #[arg(long)]
    pub data: Option<DataSpec>,
    /// Training samples to keep (0 keeps all; synthetic default 512).
    #[arg(long)]
    pub train_samples: Option<usize>,
    /// Test samples used for per-epoch evaluation (0 keeps all; synthetic default 256).
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// Seed of synthetic data.
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    /// none, native or straight_through.
    #[arg(long)]
    pub flip_mode: Option<String>,
    #[arg(long)]
    pub flip_p: Option<f64>,
    /// Enable the direct hinge regularizer at this tolerance level b.
    #[arg(long)]
    pub direct_reg: Option<f64>,
    /// Weight of the direct regularizer.
    #[arg(long)]
    pub reg_lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Levels for a per-epoch tolerance snapshot, e.g. 2,4,8.
    #[arg(long)]
    pub snapshot_b: Option<String>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to corrupt.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluation data; defaults to what the checkpoint was trained with.
    #[arg(long)]
    pub data: Option<DataSpec>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Bit error rates in percent: a list or start:stop:step.
    #[arg(long)]
    pub rates: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ToleranceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<DataSpec>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Tolerance levels, e.g. 2,4,8,16,32,64.
    #[arg(long)]
    pub b_levels: Option<String>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random neurons to check.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub max_fan_in: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// exhaustive or randomized.
    #[arg(long)]
    pub mode: Option<String>,
    /// Flip sets drawn per neuron in randomized mode.
    #[arg(long)]
    pub samples: Option<usize>,
    /// random, or tightness for the fan-in 3 neuron at b = 2.
    #[arg(long)]
    pub fixture: Option<String>,
    /// Flips allowed beyond floor(b/2); anything above 0 weakens the check
    /// and should produce counterexamples.
    #[arg(long)]
    pub extra_budget: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ShowArgs {
    /// Manifest file or a run directory.
    #[arg(default_value = "out")]
    pub path: PathBuf,
    /// Print the settings as a config file that reproduces the run.
    #[arg(long)]
    pub as_config: bool,
}

fn init_threads() -> CliResult<()> {
    let Some(v) = std::env::var_os("BNN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("BNN_THREADS = {v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Tolerance(a) => commands::tolerance(a),
        Command::VerifyTheorem(a) => commands::verify_theorem(a),
        Command::ShowManifest(a) => commands::show_manifest(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bnn-bet: {e}");
            e.exit()
        }
    }
}
