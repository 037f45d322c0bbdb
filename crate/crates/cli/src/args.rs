use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "faf",
    version,
    about = "Multimodal feature-fusion toolkit: data, training, evaluation, serving"
)]
pub struct Cli {
    /// JSON file of defaults (`model`, `train`, `data`, `test_fraction`);
    /// flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as JSON lines.
    GenData(GenDataArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and write the report.
    Eval(EvalArgs),
    /// Train and evaluate every nonempty modality subset.
    Ablate(AblateArgs),
    /// Score one feature record with a checkpoint.
    Predict(PredictArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Serve the prediction API over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    /// Gaussian blobs, separable from any single modality.
    Blobs,
    /// Modular shares, decodable only from all three modalities.
    Shares,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: DataKind,
    /// Records per class for `blobs`; total records for `shares`.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Noise standard deviation (default 0.3 for blobs, 0.1 for shares).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Number of classes (default 5).
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of face,body,text (default: all).
    #[arg(long)]
    pub modalities: Option<String>,
    /// Also write the per-epoch training history as JSON.
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Report to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Report to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Held-out fraction (default 0.2).
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// JSON object with optional `face`, `body`, `text`, `text_raw`.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory of checkpoints, loaded once at startup.
    #[arg(long, value_name = "DIR")]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub port: u16,
    /// Directory of stored reports (`*.json`).
    #[arg(long, value_name = "DIR")]
    pub reports_dir: Option<PathBuf>,
    /// UI assets served under `/`.
    #[arg(long, value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}
