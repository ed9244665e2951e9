#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vocalmap::corpus::Split;
use vocalmap::train::Preset;

/// Marks an error as a problem with the request (exit code 1) rather than a
/// failure while doing the work (exit code 2).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(message: impl Into<String>) -> anyhow::Error {
    Invalid(message.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "vocalmap", version, about = "Voice-pathology spectrogram transformers with attention-rollout maps")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus with alignments.
    Synth(SynthArgs),
    /// Split a manifest and write normalized, padded spectrograms.
    Featurize(FeaturizeArgs),
    /// Train a model from featurized data.
    Train(TrainArgs),
    /// Print UAR and AUC for one or more checkpoints on a split.
    Eval(EvalArgs),
    /// Compute a relevance map for one recording.
    Rollout(RolloutArgs),
    /// Render a relevance map over its spectrogram with phoneme annotations.
    Render(RenderArgs),
    /// Project embeddings to 2-D with t-SNE.
    Project(ProjectArgs),
    /// Compare two checkpoints sample by sample and render each case.
    Cases(CasesArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_healthy: Option<usize>,
    #[arg(long)]
    pub n_patho: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pad or truncate to this many seconds (default: model max_frames / 100).
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV `name,category` replacing the built-in pathology table.
    #[arg(long)]
    pub pathology_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Directory written by `featurize`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Repeat to print one table row per checkpoint.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Directory for predictions, embeddings and metrics.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A `.fbnk` file from `featurize`, or a WAV file.
    #[arg(long)]
    pub input: PathBuf,
    /// Class to explain (default: the predicted class).
    #[arg(long)]
    pub class: Option<usize>,
    /// Output `.rmap` path; a `.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Normalization statistics for WAV input (default: next to the checkpoint).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// A `.fbnk` spectrogram or a WAV file.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    /// JSON interval list or TextGrid.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a grayscale panel beside the overlay.
    #[arg(long)]
    pub side_by_side: bool,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// CSV written by `eval --out`.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; scatter plots are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CasesArgs {
    /// Frozen-backbone checkpoint.
    #[arg(long)]
    pub checkpoint_a: PathBuf,
    /// Fine-tuned checkpoint.
    #[arg(long)]
    pub checkpoint_b: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(config, a),
        Command::Featurize(a) => commands::featurize(config, a),
        Command::Train(a) => commands::train(config, a),
        Command::Eval(a) => commands::eval(config, a),
        Command::Rollout(a) => commands::rollout(config, a),
        Command::Render(a) => commands::render(config, a),
        Command::Project(a) => commands::project(config, a),
        Command::Cases(a) => commands::cases(config, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Invalid>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
