mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Sentence compression by deleting words from constituency parse trees
/// with a top-down TreeLSTM.
#[derive(Debug, Parser)]
#[command(name = "treecomp", version)]
pub struct Cli {
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert compressed_tokens records into keep_mask records.
    Align(AlignArgs),
    /// Train one model with early stopping on the validation split.
    Train(TrainArgs),
    /// Train one model per hidden size and rank them by validation t.
    Gridsearch(GridArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Compress bracketed trees with a checkpoint.
    Compress(CompressArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Input JSON-lines corpus.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output corpus with keep_mask on every record.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Where rejected records go (default: <output>.rejects).
    #[arg(long)]
    pub rejects: Option<PathBuf>,
    /// Exit with status 2 on the first bad record.
    #[arg(long)]
    pub strict: bool,
}

/// Run settings shared by `train` and `gridsearch`. Each flag overrides
/// the key of the same name (with `_` for `-`) in `--config`.
#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus (JSON lines).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation corpus (JSON lines).
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Plain-text word embeddings; random vectors are used when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Size of random embeddings (default: number of tags).
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Output head: binary or vectorial.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L2 weight on weight matrices.
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep threshold of the binary head.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Initial forget-gate bias.
    #[arg(long)]
    pub forget_bias: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Hidden sizes to try.
    #[arg(long, value_delimiter = ',', default_value = "200,250,300,350,400")]
    pub sizes: Vec<usize>,
    /// Corpus label for the table (default: training file stem).
    #[arg(long)]
    pub corpus_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus to score.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for report.json, report.txt and histogram.csv; the table
    /// is printed either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Retrain this many models (seeds seed, seed+1, ...) with the
    /// checkpoint's settings and report their mean. Needs --train and
    /// --validation.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Training corpus; also checked against the checkpoint vocabulary.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Also report each annotator separately.
    #[arg(long)]
    pub per_annotator: bool,
    /// Fail on a vocabulary fingerprint mismatch instead of warning.
    #[arg(long)]
    pub strict: bool,
    /// Corpus label for the table.
    #[arg(long)]
    pub corpus_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// File with one bracketed tree per line; stdin when neither this nor
    /// TREES is given.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Bracketed trees given directly.
    pub trees: Vec<String>,
    /// Also print the pruned tree.
    #[arg(long)]
    pub tree: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random trees to check.
    #[arg(long, default_value_t = 20)]
    pub trees: usize,
    /// Largest hidden size; each tree draws one in 1..=HIDDEN.
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, default_value_t = 15)]
    pub max_nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "binary,vectorial")]
    pub heads: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.0001")]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = treecomp_core::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Perturb the analytic gradient (negative control).
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// Keep rules on preterminal tags and PP/ADVP ancestors.
    Rule,
    /// One word whose label depends on its ancestors only.
    Context,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Rule)]
    pub kind: SynthKind,
    #[arg(long, short, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
