use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kaconvtext::embeddings::EmbedMode;
use kaconvtext::models::Variant;

#[derive(Debug, Parser)]
#[command(name = "kaconvtext", version, about = "Train and inspect KAConvText text classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/test split of a TSV dataset.
    Split(SplitArgs),
    /// Train a classifier and write its checkpoint and run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a TSV dataset.
    Eval(EvalArgs),
    /// Count trainable parameters without building the model.
    CountParams(CountArgs),
    /// Dump the spline coefficients of a checkpoint as CSV.
    ExportSplines(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "PATH")]
    pub task_file: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving train.tsv and test.tsv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Hyperparameters shared by `train` and `count-params`. Unset flags fall
/// back to the config file, then to the built-in defaults.
#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// `key = value` lines or a JSON object with run settings.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub model: Option<Variant>,
    #[arg(long, value_parser = parse_embed)]
    pub embed: Option<EmbedMode>,
    #[arg(long, value_name = "PATH")]
    pub vectors: Option<PathBuf>,
    #[arg(long, value_parser = parse_dim)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub spline_order: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub task_file: PathBuf,
    /// Held-out set; without it the task file is split by --ratio.
    #[arg(long, value_name = "PATH")]
    pub eval_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Write splines_epoch_NN.csv here after every epoch.
    #[arg(long, value_name = "DIR")]
    pub export_splines: Option<PathBuf>,
    /// Run directory: manifest.json and checkpoint/.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory, or a run directory containing checkpoint/.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub task_file: PathBuf,
    /// Also write the full metrics report as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, required_unless_present = "task_file")]
    pub vocab_size: Option<usize>,
    #[arg(long, required_unless_present = "task_file")]
    pub classes: Option<usize>,
    /// Derive vocabulary size and class count from this dataset's training split.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["vocab_size", "classes"])]
    pub task_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    /// Print one line per component before the total.
    #[arg(long)]
    pub breakdown: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Destination CSV file.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Value of the epoch column; defaults to the checkpoint's epoch count.
    #[arg(long)]
    pub epoch: Option<usize>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: kaconvtext::Error| e.to_string())
}

fn parse_embed(s: &str) -> Result<EmbedMode, String> {
    s.parse().map_err(|e: kaconvtext::Error| e.to_string())
}

fn parse_dim(s: &str) -> Result<usize, String> {
    match s {
        "100" => Ok(100),
        "300" => Ok(300),
        _ => Err(format!("embedding dimension must be 100 or 300, got {s:?}")),
    }
}
