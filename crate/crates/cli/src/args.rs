use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "encode", version, about = "Long-term user interest extraction and target-attention scoring")]
pub struct Cli {
    /// Seed for every random stream; ENCODE_SEED overrides it.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted multi-interest users.
    GenData(GenDataArgs),
    /// Convert a CSV event log into a dataset with random item embeddings.
    Ingest(IngestArgs),
    /// Train the d×m projection with a metric-learning loss.
    TrainProj(TrainProjArgs),
    /// Extract per-user interests into a store file.
    Extract(ExtractArgs),
    /// Train the logistic scoring head on a strategy's interest vectors.
    TrainHead(TrainHeadArgs),
    /// Score a file of requests against a store.
    Score(ScoreArgs),
    /// Answer line-delimited JSON requests on stdin or a TCP port.
    Serve(ServeArgs),
    /// Measure online latency and metric evaluations per target.
    Bench(BenchArgs),
    /// Relevance indicator and AUC/GAUC for a set of strategies.
    Evaluate(EvaluateArgs),
    /// Sweep one parameter and report relevance indicator and AUC.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of users.
    #[arg(long, default_value_t = 100)]
    pub users: usize,
    /// Behaviors per user.
    #[arg(long = "L", default_value_t = 1000)]
    pub l: usize,
    /// Catalog size.
    #[arg(long, default_value_t = 50_000)]
    pub items: usize,
    /// Item embedding dimension.
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 16)]
    pub categories: usize,
    /// Planted interests per user.
    #[arg(long, default_value_t = 3)]
    pub interests: usize,
    /// Minimum angle between a user's interest centers, in degrees.
    #[arg(long, default_value_t = 60.0)]
    pub separation: f64,
    /// Concentration of behaviors around their center (noise scale 1/kappa).
    #[arg(long, default_value_t = 50.0)]
    pub kappa: f64,
    /// Impressions drawn near the user's centers, per user.
    #[arg(long, default_value_t = 20)]
    pub n_pos: usize,
    /// Impressions drawn uniformly from the catalog, per user.
    #[arg(long, default_value_t = 20)]
    pub n_neg: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value = "dataset.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with columns user_id,item_id,timestamp,category.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    /// Keep only the most recent events per user.
    #[arg(long, default_value_t = 1000)]
    pub max_len: usize,
    #[arg(long, default_value = "dataset.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    /// Reduced dimension m.
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// none | mse | n-pair-mc | triplets-fixed | triplets-dynamic
    #[arg(long, default_value = "triplets-dynamic")]
    pub loss: String,
    /// Margin for triplets-fixed.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// Negatives per anchor for n-pair-mc.
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    /// within-neighbors | within-sequence | within-batch
    #[arg(long, default_value = "within-sequence")]
    pub sampling: String,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    /// Weight of the auxiliary metric-learning loss.
    #[arg(long, default_value_t = 0.1)]
    pub aux_weight: f64,
}

#[derive(Debug, Args)]
pub struct TrainProjArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value = "projection.bin")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Cluster count K.
    #[arg(long = "K", default_value_t = 30)]
    pub k: usize,
    /// Clustering passes T.
    #[arg(long = "T", default_value_t = 15)]
    pub t: usize,
    /// Scaling factor of the unified similarity.
    #[arg(long, default_value_t = 20.0)]
    pub beta: f64,
    /// unified | scaled-dot
    #[arg(long, default_value = "unified")]
    pub relevance: String,
    /// kmeans | random | agglomerative
    #[arg(long, default_value = "kmeans")]
    pub clustering: String,
    /// Retrieval budget of SIM, ETA and TWIN.
    #[arg(long = "k", default_value_t = 50)]
    pub k_retrieve: usize,
    /// SimHash bits n.
    #[arg(long, default_value_t = 64)]
    pub n_bits: usize,
    /// SDIM slice width in bits.
    #[arg(long, default_value_t = 2)]
    pub slice_width: usize,
    /// Short sequence length M for DIN and the real-time feature.
    #[arg(long = "M", default_value_t = 50)]
    pub short_len: usize,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub projection: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Worker threads; output is identical for any value.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long, default_value = "store.bin")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct HeadArgs {
    #[arg(long, default_value_t = 1e-2)]
    pub head_lr: f64,
    #[arg(long, default_value_t = 32)]
    pub head_batch: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Append the mean of the last M behaviors as a head feature.
    #[arg(long)]
    pub realtime: bool,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub projection: PathBuf,
    /// Strategy providing the interest vector.
    #[arg(long, default_value = "encode")]
    pub strategy: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    #[arg(long, default_value = "head.bin")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServingArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    /// Dataset supplying the item catalog.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub beta: f64,
    /// unified | scaled-dot
    #[arg(long, default_value = "unified")]
    pub relevance: String,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub serving: ServingArgs,
    /// One JSON request per line.
    #[arg(long)]
    pub requests: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub serving: ServingArgs,
    /// Listen on this TCP port instead of standard input.
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset supplying the catalog; a synthetic catalog is generated if absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trained projection; a random one is used if absent.
    #[arg(long)]
    pub projection: Option<PathBuf>,
    #[arg(long, default_value = "encode,din-l")]
    pub strategies: String,
    /// Comma-separated sequence lengths.
    #[arg(long = "L", default_value = "1000,4000,16000")]
    pub lengths: String,
    #[arg(long, default_value_t = 200)]
    pub targets: usize,
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
    /// Catalog size when generating.
    #[arg(long, default_value_t = 50_000)]
    pub items: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub projection: PathBuf,
    /// Comma-separated strategies, or "all".
    #[arg(long, default_value = "all")]
    pub strategies: String,
    /// (user, target) pairs for the relevance indicator.
    #[arg(long, default_value_t = 300)]
    pub pairs: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    #[arg(long, default_value = "ri_report.csv")]
    pub ri_out: PathBuf,
    #[arg(long, default_value = "auc_report.csv")]
    pub auc_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// K | m | beta | loss | sampling | clustering
    #[arg(long)]
    pub sweep: String,
    /// Comma-separated values; numeric ranges as a..b (step a) or a..b:step.
    #[arg(long)]
    pub values: String,
    #[arg(long, default_value_t = 300)]
    pub pairs: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    #[arg(long, default_value = "ablation.csv")]
    pub out: PathBuf,
}
