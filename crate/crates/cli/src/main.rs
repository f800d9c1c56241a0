//! `knrm`: synthesize logs, derive click labels, train, rank, evaluate and
//! diagnose K-NRM models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "knrm", version, about = "Kernel-pooling neural ranking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic query log with planted synonyms.
    Synth(SynthArgs),
    /// Derive DCTR labels, grades and single-click cases from a log.
    Labels(LabelsArgs),
    /// Train a model from a log and its labels.
    Train(Box<TrainArgs>),
    /// Rank the candidates of every query in a log.
    Rank(RankArgs),
    /// Score one or more runs files.
    Eval(EvalArgs),
    /// Kernel ablation, occupancy and movement diagnostics.
    Diagnose(DiagnoseArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving train.log, test.log, truth.tsv and pretrained.vec.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 5000)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub docs_per_query: usize,
    #[arg(long, default_value_t = 8)]
    pub sessions_per_query: usize,
    #[arg(long, default_value_t = 0.5)]
    pub density: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub correlation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Label file (`query_key TAB doc_id TAB score TAB grade`).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write single-click cases here.
    #[arg(long)]
    pub raw_cases: Option<PathBuf>,
    /// Additive DCTR smoothing; 0 keeps raw click-through rates.
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Pre-trained embeddings in word2vec text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// full, exact-match, frozen, mean-pool or max-pool.
    #[arg(long)]
    pub variant: Option<String>,
    /// kernel, mean or max.
    #[arg(long)]
    pub pooling: Option<String>,
    /// Kernel bank as `mu:sigma,mu:sigma,...`.
    #[arg(long)]
    pub kernels: Option<String>,
    /// Width of the soft kernels of the default bank.
    #[arg(long)]
    pub soft_sigma: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Build pairs from DCTR `scores` or mapped `grades`.
    #[arg(long)]
    pub pair_labels: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Record wall-clock time per epoch in the report.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    /// Rank with `bm25` or `lm` instead of a model.
    #[arg(long, conflicts_with = "model")]
    pub baseline: Option<String>,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Runs files; every run after the first is compared with the first.
    #[arg(long = "runs", required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Graded evaluation against a label file.
    #[arg(long, conflicts_with_all = ["raw_cases", "log"])]
    pub labels: Option<PathBuf>,
    /// Testing-RAW evaluation against a single-click case file.
    #[arg(long, conflicts_with = "log")]
    pub raw_cases: Option<PathBuf>,
    /// Testing-RAW evaluation against the single-click sessions of a log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = knrm::eval::DEFAULT_PERMUTATION_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    /// Embeddings before training, for the movement matrix.
    #[arg(long)]
    pub reference_embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub max_pairs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value = "kernel")]
    pub pooling: String,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Labels(a) => commands::labels(&a),
        Command::Train(a) => commands::train(&a),
        Command::Rank(a) => commands::rank(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
