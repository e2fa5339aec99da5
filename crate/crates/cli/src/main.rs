//! `streetscape`: run the street-view rating pipeline one stage at a time.
//!
//! Every stage reads and writes flat files so it can be rerun on its own.
//! Exit status is 0 on success, 1 on a usage error and 2 on a data error.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use streetscape::dataset::{Subset, Task};
use streetscape::model::{Normalize, DEFAULT_EPOCHS, DEFAULT_LAMBDA};

#[derive(Parser)]
#[command(name = "streetscape", version, about = "Street-view facade quality and continuity rating pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample capture points along a street network.
    Sample(SampleArgs),
    /// Build a visual-word codebook from a descriptor sample.
    Codebook(CodebookArgs),
    /// Turn images into feature vectors, or import precomputed embeddings.
    Features(FeaturesArgs),
    /// Stratified train/dev/test split of the labeled images of one task.
    Split(SplitArgs),
    /// Train a task model and report train/dev/test metrics.
    Train(TrainArgs),
    /// Evaluate a saved model on a split subset.
    Evaluate(EvaluateArgs),
    /// Screen out street (unqualified) images with the qualification model.
    Screen(ScreenArgs),
    /// Score qualified images and aggregate per street segment.
    Score(ScoreArgs),
    /// Export segment scores as a GeoJSON scoring map.
    Map(MapArgs),
    /// Compare segment scores with survey ratings (Spearman).
    Validate(ValidateArgs),
    /// Run the HTTP labeling service.
    Serve(ServeArgs),
    /// Generate the synthetic demo corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Right,
    Left,
}

#[derive(Args)]
struct SampleArgs {
    /// GeoJSON FeatureCollection of LineStrings with a segment_id property.
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200.0)]
    interval_m: f64,
    /// Camera side relative to the travel direction.
    #[arg(long, value_enum, default_value = "right")]
    side: Side,
}

#[derive(Args)]
struct CodebookArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// Descriptors sampled from each image.
    #[arg(long, default_value_t = 50)]
    per_image: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long, required_unless_present = "import")]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "import")]
    codebook: Option<PathBuf>,
    /// Embedding CSV (`extractor_id,<id>` header) to validate and import.
    #[arg(long, conflicts_with_all = ["manifest", "codebook"])]
    import: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    per_class_dev: usize,
    #[arg(long, default_value_t = 60)]
    per_class_test: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long)]
    seed: u64,
    /// Feature normalization; defaults to l2 for bovw features, standardize otherwise.
    #[arg(long, value_parser = parse_normalize)]
    normalize: Option<Normalize>,
    /// Comma-separated lambda values tried on the dev set.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Vec<f64>,
    /// Metrics CSV for train/dev/test.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Dev,
    Test,
}

impl From<SubsetArg> for Subset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::Train => Subset::Train,
            SubsetArg::Dev => Subset::Dev,
            SubsetArg::Test => Subset::Test,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    subset: SubsetArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScreenArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Manifest of the images kept (building images).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Manifest of qualified images, as written by `screen`.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    quality_model: PathBuf,
    #[arg(long)]
    continuity_model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated bin edges for quality_mean.
    #[arg(long, value_delimiter = ',')]
    quality_bins: Vec<f64>,
    /// Comma-separated bin edges for continuity_share.
    #[arg(long, value_delimiter = ',')]
    continuity_bins: Vec<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    survey: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Model for the uncertain strategy; repeat for several tasks.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Built UI bundle served at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    n_images: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.05)]
    label_noise: f64,
    #[arg(long)]
    seed: u64,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_normalize(s: &str) -> Result<Normalize, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// Failure of a stage: bad invocation or bad data.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
