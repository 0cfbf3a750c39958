// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! `capsdistill`: feature extraction, training, distillation and sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

/// Environment variable that relocates the output root.
pub const OUTPUT_ROOT_ENV: &str = "CAPSDISTILL_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "capsdistill", version, about = "Capsule-level knowledge distillation for EEG-style time series")]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = ".")]
    output_root: PathBuf,
    /// Independent jobs (splits, sweep cells) to run in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract PSD and DE features from raw recordings into FTZ files.
    Features(FeaturesArgs),
    /// Run one training phase on every split.
    Train(TrainArgs),
    /// Model-size or data-fraction sweep with and without distillation.
    Sweep(SweepArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BandPreset {
    /// delta, theta, alpha, beta, gamma
    Five,
    /// 25 two-hertz bands from 0.5 Hz
    TwoHz,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// A recording (`.csv` or `.cdrw`) or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for FTZ files.
    #[arg(long)]
    out: PathBuf,
    /// Sampling rate of CSV input, in Hz.
    #[arg(long, default_value_t = 1000.0)]
    sample_rate: f64,
    /// Rate after decimation; must divide the input rate.
    #[arg(long, default_value_t = 200.0)]
    target_rate: f64,
    #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"], default_values_t = [1.0, 75.0])]
    bandpass: Vec<f64>,
    #[arg(long, default_value_t = 50.0)]
    notch: f64,
    /// Skip filtering and scaling (input is already clean).
    #[arg(long)]
    no_preprocess: bool,
    #[arg(long, value_enum, default_value_t = BandPreset::Five)]
    bands: BandPreset,
    /// Seconds per segment, one window per second.
    #[arg(long, default_value_t = 8)]
    windows: usize,
    #[arg(long, value_enum, default_value_t = DeArg::BandFiltered)]
    de_method: DeArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DeArg {
    BandFiltered,
    Spectral,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Pretrain,
    Finetune,
    Distill,
    Scratch,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Regression,
}

/// Flags shared by `train` and `sweep`; each overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct PlanFlags {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of FTZ files.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Share of each training set to use, in (0, 1].
    #[arg(long)]
    fraction: Option<f64>,
    /// `loso`, `fixed-session:N` or `kfold:K`.
    #[arg(long)]
    protocol: Option<String>,
    /// Student hidden units (a perfect square).
    #[arg(long)]
    student_hidden: Option<usize>,
    /// Output directory, relative to the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    phase: Option<PhaseArg>,
    /// Teacher checkpoint, or a directory of per-split checkpoints.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Starting weights for fine-tuning; file or per-split directory.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Repeat the run recorded in this manifest.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    plan: PlanFlags,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Size,
    Fraction,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Teacher checkpoint, or a directory of per-split checkpoints.
    #[arg(long)]
    teacher: PathBuf,
    #[command(flatten)]
    plan: PlanFlags,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML file holding synthetic-data settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write raw recordings (`.cdrw` plus label sidecars) instead of features.
    #[arg(long)]
    raw: bool,
    #[arg(long, value_enum, default_value_t = DeArg::BandFiltered)]
    de_method: DeArg,
    /// Output directory, relative to the output root.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of FTZ files.
    #[arg(long)]
    data: PathBuf,
    /// Only score segments of this subject.
    #[arg(long)]
    subject: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ctx = commands::Context {
        output_root: cli.output_root,
        jobs: cli.jobs.max(1),
        force: cli.force,
    };
    let result = match cli.command {
        Command::Features(a) => commands::features(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::from(error::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
