//! Argument grammar and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use deocc_core::mask::SynthesisConfig;
use deocc_core::Disparity;

use crate::commands::{self, SynthesizeOptions, TrainFile, TrainOptions};
use crate::error::{CliError, Result};
use crate::lfdir;

/// Light-field de-occlusion: occluder synthesis, refocusing baselines,
/// network training, inference and evaluation.
#[derive(Debug, Parser)]
#[command(name = "deocc", version)]
pub struct Cli {
    /// On failure, print the error as one JSON object on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed warped occluder masks into clean light fields.
    Synthesize(SynthesizeArgs),
    /// Shift-and-average or median refocusing at one or more disparities.
    Refocus(RefocusArgs),
    /// Train a network on synthesized sample folders.
    Train(TrainArgs),
    /// Predict the occlusion-free center view of a light field.
    Infer(InferArgs),
    /// Score predictions against groundtruth (l1, PSNR, SSIM).
    Evaluate(EvaluateArgs),
    /// Tabulate several evaluation reports side by side.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// A light-field directory, or a folder of them.
    #[arg(long)]
    pub lf_dir: PathBuf,
    /// Folder of RGBA mask PNGs (or `<name>.png` with `<name>_alpha.png`).
    #[arg(long)]
    pub mask_dir: PathBuf,
    /// Output folder; receives `sample_NNNNN/` folders and `synthesis.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Occlusion layers per sample (1 to 3) [default: 1].
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// Base seed [env: LFDEOCC_SEED, default 0].
    #[arg(long, env = "LFDEOCC_SEED", hide_env = true)]
    pub seed: Option<u64>,
    /// Permute RGB channels of each sample [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shuffle_channels: Option<bool>,
    /// Mask channel permutation: `same` as the light field or `independent` [default: same].
    #[arg(long)]
    pub mask_shuffle: Option<String>,
    /// Threshold mask alpha to {0, 1} at this level.
    #[arg(long)]
    pub binarize: Option<f32>,
    /// JSON file with synthesis settings; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefocusArgs {
    #[arg(long)]
    pub lf_dir: PathBuf,
    /// Single refocus disparity in pixels per view step.
    #[arg(long, conflicts_with = "sweep", allow_hyphen_values = true)]
    pub disparity: Option<f64>,
    /// Evenly spaced disparities `lo:hi:n`.
    #[arg(long, allow_hyphen_values = true)]
    pub sweep: Option<String>,
    /// `avg` or `median`.
    #[arg(long, default_value = "avg")]
    pub method: String,
    /// Output folder for `refocus_NNN.png` and `sharpness.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Folder of synthesized sample folders.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON `{"network": {...}, "train": {...}}`; omitted fields keep desk defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output folder for checkpoints, weights and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for initialization and batch order [env: LFDEOCC_SEED].
    #[arg(long, env = "LFDEOCC_SEED", hide_env = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from a checkpoint file.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Weights or checkpoint file.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub lf_dir: PathBuf,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
    /// Rectify at this disparity instead of the manifest's `rectified_disparity`.
    #[arg(long, allow_hyphen_values = true)]
    pub rectify_disparity: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A predicted PNG, or a folder of `<scene>.png`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Groundtruth PNG, or a folder with `<scene>.png` or `<scene>/gt.png`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output folder for `report.csv` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `name=path` of an evaluation report (file or folder); repeatable.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<String>,
    /// Output folder for `comparison.{csv,md,json}`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synthesize(a) => {
            let mut config: SynthesisConfig = match &a.config {
                Some(p) => lfdir::read_json(p)?,
                // flags opt in to shuffling; a config file states its own choice
                None => SynthesisConfig {
                    layer_count: 1,
                    channel_shuffle: false,
                    ..SynthesisConfig::default()
                },
            };
            // flags override the config file
            if let Some(n) = a.layers {
                config.layer_count = n;
            }
            if let Some(s) = a.shuffle_channels {
                config.channel_shuffle = s;
            }
            if let Some(m) = &a.mask_shuffle {
                config.mask_shuffle = commands::parse_mask_shuffle(m)?;
            }
            if a.binarize.is_some() {
                config.binarize = a.binarize;
            }
            if let Some(s) = a.seed {
                config.rng_seed = s;
            }
            commands::cmd_synthesize(&SynthesizeOptions {
                lf_dir: a.lf_dir,
                mask_dir: a.mask_dir,
                out: a.out,
                count: a.count,
                config,
            })?;
        }
        Command::Refocus(a) => {
            let ds = match (a.disparity, &a.sweep) {
                (Some(d), None) => {
                    vec![Disparity::new(d).map_err(|e| CliError::Usage(e.to_string()))?]
                }
                (None, Some(s)) => commands::parse_sweep(s)?,
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --disparity or --sweep".into(),
                    ))
                }
            };
            commands::cmd_refocus(&a.lf_dir, &ds, commands::parse_method(&a.method)?, &a.out)?;
        }
        Command::Train(a) => {
            let config: TrainFile = match &a.config {
                Some(p) => lfdir::read_json(p)?,
                None => TrainFile::default(),
            };
            commands::cmd_train(&TrainOptions {
                data: a.data,
                out: a.out,
                config,
                seed: a.seed,
                epochs: a.epochs,
                max_steps: a.max_steps,
                resume: a.resume,
            })?;
        }
        Command::Infer(a) => {
            commands::cmd_infer(&a.weights, &a.lf_dir, &a.out, a.rectify_disparity)?;
        }
        Command::Evaluate(a) => {
            commands::cmd_evaluate(&a.pred, &a.gt, &a.out)?;
        }
        Command::Report(a) => {
            let inputs = a
                .inputs
                .iter()
                .map(|s| commands::parse_named(s))
                .collect::<Result<Vec<_>>>()?;
            commands::cmd_report(&inputs, &a.out)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            if cli.error_json {
                eprintln!(
                    "{}",
                    serde_json::to_string(&e.report()).expect("error report serializes")
                );
            } else {
                eprintln!("error: {e}");
            }
            match e {
                CliError::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}
