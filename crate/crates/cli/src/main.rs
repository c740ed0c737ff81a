//! `semmatch` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 unreadable or
//! malformed data, 4 numeric failure.

mod commands;
mod config;
mod overlay;
mod values;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semmatch::tensor::TensorError;

use crate::config::Resolver;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(semmatch::Error),
}

impl From<semmatch::Error> for CliError {
    fn from(e: semmatch::Error) -> Self {
        Self::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use semmatch::Error as E;
        match self {
            Self::Usage(_) | Self::Lib(E::Config(_)) => 2,
            Self::Lib(E::NonFiniteLoss { .. } | E::Singular { .. } | E::Tensor(TensorError::NonFinite { .. })) => 4,
            Self::Lib(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => f.write_str(m),
            Self::Lib(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "semmatch", version, about = "Weakly-supervised semantic matching")]
struct Cli {
    /// Base seed; every random choice derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Render synthetic pairs with ground-truth transforms and keypoints.
    Synth(SynthArgs),
    /// Train the regressor and write a weight checkpoint.
    Train(TrainArgs),
    /// PCK of a checkpoint over a keypoint dataset.
    Eval(EvalArgs),
    /// Predict the transform between two images and draw it.
    Match(MatchArgs),
    /// Resample an image through a saved transform.
    Warp(WarpArgs),
    /// Write the foreground masks of an image pair.
    Masks(MasksArgs),
}

// Value flags are kept as text so that flag, file and default resolve
// through one parser.

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<String>,
    /// translation, affine, tps or cascade.
    #[arg(long)]
    pub family: Option<String>,
    /// Perturbation scale in normalized units, at most 0.3.
    #[arg(long)]
    pub magnitude: Option<String>,
    /// Square image side in pixels.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub keypoints: Option<String>,
    /// Probability of mirroring each base image.
    #[arg(long)]
    pub flip: Option<String>,
    /// Probability of cropping each base image.
    #[arg(long)]
    pub crop: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct DescriptorArgs {
    /// Pixels per feature cell.
    #[arg(long)]
    pub cell_size: Option<String>,
    #[arg(long)]
    pub orientation_bins: Option<String>,
    /// `WxH` applied before extraction, or `none`.
    #[arg(long)]
    pub resize: Option<String>,
    /// `descriptor` extracts from the images; `dsmf` reads `<image>.dsmf` sidecars.
    #[arg(long)]
    pub features: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub hidden: Option<String>,
    /// Pooled regions per source axis.
    #[arg(long)]
    pub pool: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Directory with `manifest.tsv` (pairs with ground truth) or `pairs.tsv`.
    /// Without it, synthetic scenes are generated.
    #[arg(long)]
    pub data: Option<String>,
    /// Synthetic scenes.
    #[arg(long)]
    pub pairs: Option<String>,
    /// Warps per synthetic scene; each gives one training pair.
    #[arg(long)]
    pub members: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub magnitude: Option<String>,
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub flip: Option<String>,
    #[arg(long)]
    pub crop: Option<String>,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Learning rate of the weakly-supervised phase.
    #[arg(long)]
    pub lr: Option<String>,
    /// Supervised steps on known ground truth before the weak phase.
    #[arg(long)]
    pub warmup_steps: Option<String>,
    #[arg(long)]
    pub warmup_lr: Option<String>,
    #[arg(long)]
    pub lambda_c: Option<String>,
    #[arg(long)]
    pub lambda_t: Option<String>,
    /// Correspondence threshold in target cells.
    #[arg(long)]
    pub phi: Option<String>,
    /// lattice or random.
    #[arg(long)]
    pub cycle_sample: Option<String>,
    #[arg(long)]
    pub sample_count: Option<String>,
    /// full or affine.
    #[arg(long)]
    pub cycle_stage: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub detach_masks: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub foreground_guided: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub swap: Option<String>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<String>,
    /// Per-step loss TSV.
    #[arg(long)]
    pub log: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    /// Dataset TSV, or a directory holding `pairs.tsv`.
    #[arg(long)]
    pub data: Option<String>,
    /// Checkpoint; without it the identity transform is scored.
    #[arg(long)]
    pub weights: Option<String>,
    /// Comma-separated thresholds.
    #[arg(long)]
    pub tau: Option<String>,
    /// target or source.
    #[arg(long)]
    pub box_side: Option<String>,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    /// Write the report rows here as TSV.
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct MatchArgs {
    #[arg(long)]
    pub a: Option<String>,
    #[arg(long)]
    pub b: Option<String>,
    #[arg(long)]
    pub weights: Option<String>,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    /// Known transform from A to B, for an endpoint error.
    #[arg(long)]
    pub gt: Option<String>,
    /// Also write A resampled into B's frame.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub warped: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct WarpArgs {
    #[arg(long)]
    pub image: Option<String>,
    #[arg(long)]
    pub transform: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct MasksArgs {
    #[arg(long)]
    pub a: Option<String>,
    #[arg(long)]
    pub b: Option<String>,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut r = Resolver::load(cli.config.as_deref())?;
    let seed = r.value("seed", cli.seed.map(|s| s.to_string()), 0u64)?;
    match cli.command {
        Command::Synth(a) => commands::synth(&mut r, a, seed),
        Command::Train(a) => commands::train(&mut r, a, seed),
        Command::Eval(a) => commands::eval(&mut r, a, seed),
        Command::Match(a) => commands::match_pair(&mut r, a, seed),
        Command::Warp(a) => commands::warp(&mut r, a),
        Command::Masks(a) => commands::masks(&mut r, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
