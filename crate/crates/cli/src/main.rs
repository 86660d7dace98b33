//! `hyperproj`: split, cluster, train, evaluate and query hypernym projection models.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyperproj::{EmbeddingFormat, PenaltyProduct, RegularizerKind, Similarity};

#[derive(Parser, Debug)]
#[command(name = "hyperproj", version, about = "Hypernym prediction by projection learning over word embeddings")]
struct Cli {
    /// Worker threads for training, evaluation and neighbor search (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a relations file into lexically disjoint train/validation/test buckets.
    Split(SplitArgs),
    /// Fit k-means over the hyponym-to-hypernym offsets of training pairs.
    Cluster(ClusterArgs),
    /// Train one projection matrix per cluster.
    Train(TrainArgs),
    /// Score a model on held-out pairs: hit@1..l and AUC.
    Eval(EvalArgs),
    /// Print ranked hypernym candidates for words.
    Predict(PredictArgs),
    /// Generate a synthetic fixture with a planted projection.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct EmbeddingArgs {
    /// Word vectors, word2vec text or binary layout.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// `text` or `binary`.
    #[arg(long, default_value = "text")]
    pub format: EmbeddingFormat,
    /// Scale every vector to unit length on load.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// `source<TAB>target<TAB>relation` lines (hypernym, synonym or cohyponym).
    #[arg(long)]
    pub relations: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Training pairs, e.g. `train.tsv` from `split`.
    #[arg(long)]
    pub relations: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = hyperproj::clustering::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Stop once no centroid moves further than this.
    #[arg(long, default_value_t = hyperproj::clustering::DEFAULT_TOL)]
    pub tol: f64,
    /// Cluster model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Directory holding `train.tsv`, `validation.tsv` and `test.tsv`.
    #[arg(long)]
    pub split: PathBuf,
    /// Reuse clusters from `hyperproj cluster` instead of fitting them here.
    #[arg(long, conflicts_with = "k")]
    pub clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// none, asym, asym-reproj, neighbor or neighbor-reproj.
    #[arg(long = "reg", default_value = "none")]
    pub regularizer: RegularizerKind,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Inner product inside the penalty: dot or cosine.
    #[arg(long, default_value = "dot")]
    pub penalty: PenaltyProduct,
    #[arg(long, default_value_t = 700)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    /// Standard deviation of the Gaussian initialization.
    #[arg(long, default_value_t = 0.1)]
    pub init_std: f64,
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f64,
    /// Learn a bias row alongside each matrix.
    #[arg(long)]
    pub bias: bool,
    /// Keep the checkpoint with the best validation hit@10 instead of the last one.
    #[arg(long)]
    pub select_best: bool,
    /// Similarity for validation ranking: cosine or dot.
    #[arg(long, default_value = "cosine")]
    pub similarity: Similarity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file; the loss trace and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Held-out pairs, e.g. `test.tsv` from `split`.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = hyperproj::evaluation::DEFAULT_L_MAX)]
    pub l_max: usize,
    /// Keep the hyponym itself among the candidates.
    #[arg(long)]
    pub include_query: bool,
    #[arg(long, default_value = "cosine")]
    pub similarity: Similarity,
    /// Report JSON; per-pair ranks go to the same name with a `.pairs.tsv` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Query word; repeatable.
    #[arg(long = "word")]
    pub words: Vec<String>,
    /// File with one query word per line.
    #[arg(long)]
    pub words_file: Option<PathBuf>,
    /// Candidates per word.
    #[arg(short, long, default_value_t = 10)]
    pub l: usize,
    #[arg(long)]
    pub include_query: bool,
    #[arg(long, default_value = "cosine")]
    pub similarity: Similarity,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Hyponym-hypernym pairs to generate.
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    /// Standard deviation of the Gaussian noise added to each hypernym coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Synonym distractors per hyponym.
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
    /// Planted clusters, each with its own matrix.
    #[arg(long, default_value_t = 1)]
    pub clusters: usize,
    /// Angle in degrees between a hyponym and its noiseless hypernym.
    #[arg(long, default_value_t = 60.0)]
    pub angle: f64,
    /// Largest angle in degrees between a hyponym and its distractors.
    #[arg(long, default_value_t = 15.0)]
    pub distractor_angle: f64,
    /// Length of the noiseless hypernyms.
    #[arg(long, default_value_t = 0.3)]
    pub scale: f64,
    #[arg(long, default_value = "text")]
    pub format: EmbeddingFormat,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Bad flags or inputs that are not worth a retry.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hyperproj::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYPERPROJ_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Split(a) => commands::split(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
