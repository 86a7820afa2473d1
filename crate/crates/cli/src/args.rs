use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use appd_core::simulate::DatasetKind;

#[derive(Parser, Debug)]
#[command(name = "appd", version, about = "Adversarial sequential anomaly detection for point processes")]
pub struct Cli {
    /// Worker threads for per-sequence parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    Simulate(SimulateArgs),
    /// Train detector and generator adversarially.
    Train(TrainArgs),
    /// Estimate the time-varying threshold and store it in the checkpoint.
    Threshold(ThresholdArgs),
    /// Run the online detector on every sequence.
    Detect(DetectArgs),
    /// Step-wise precision, recall and F1 on labeled data.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Singleton,
    Composite,
    Mixed,
    MixedComposite,
}

impl From<KindArg> for DatasetKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Singleton => DatasetKind::Singleton,
            KindArg::Composite => DatasetKind::Composite,
            KindArg::Mixed => DatasetKind::Mixed,
            KindArg::MixedComposite => DatasetKind::MixedComposite,
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, env = "APPD_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives sequences.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training sequences (JSONL). Sequences labeled normal are skipped.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file with training configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV (default: next to the checkpoint).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Continue from the checkpoint at --out up to the configured iterations.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, env = "APPD_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub generated_batch: Option<usize>,
    #[arg(long)]
    pub real_batch: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_detector: Option<f64>,
    /// Clip gradient norms at this value.
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Generated sequences averaged per step.
    #[arg(long, default_value_t = 32)]
    pub n_generated: usize,
    /// Number of steps covered by the curve.
    #[arg(long, default_value_t = 40)]
    pub max_step: usize,
    /// Scale coefficient applied to the mean.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, env = "APPD_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Where to write the updated checkpoint (default: in place).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON-lines output, one result per sequence.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the stored scale coefficient.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Regenerate the threshold at every step instead of using the stored curve.
    #[arg(long)]
    pub online_threshold: bool,
    /// Generated sequences per step with --online-threshold.
    #[arg(long, default_value_t = 32)]
    pub n_generated: usize,
    #[arg(long, env = "APPD_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Step metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Mean-statistic traces CSV (default: next to --out).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Last step to score (default: curve length).
    #[arg(long)]
    pub max_step: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
}
