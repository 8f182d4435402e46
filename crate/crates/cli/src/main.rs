//! `ccgen`: build datasets, train models and baselines, generate and score
//! complementary concept lists.

mod commands;
mod config;
mod diag;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::diag::{CliError, EXIT_CONFIG};

#[derive(Parser, Debug)]
#[command(name = "ccgen", version, about = "Complementary concept generation benchmark harness")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed, copied into every section of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic catalog, behavior log and word vectors.
    SynthGen(SynthGenArgs),
    /// Build the concept dataset from catalog, behavior and concept set.
    BuildDataset(BuildDatasetArgs),
    /// Train (where applicable) a baseline and write its predictions.
    TrainBaseline(TrainBaselineArgs),
    /// Train the list language model.
    TrainLm(TrainLmArgs),
    /// Generate predictions with a trained list model.
    Generate(GenerateArgs),
    /// Query a teacher for explanations and write the explained corpus.
    DistillExplanations(DistillArgs),
    /// Score prediction files on a dataset split.
    Evaluate(EvaluateArgs),
    /// Generate with a prefix mode (or score prefixed predictions) and report the scored positions.
    SequentialEval(SequentialEvalArgs),
    /// Print a results table, optionally broken down by input frequency.
    Report(ReportArgs),
    /// Convert external generations into interchange predictions.
    IngestExternal(IngestArgs),
}

#[derive(Args, Debug)]
struct SynthGenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_concepts: Option<usize>,
    #[arg(long)]
    baskets: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct BuildDatasetArgs {
    #[arg(long)]
    concepts: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_freq: Option<u64>,
    #[arg(long)]
    k_collect: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Glove,
    Knn,
    Pair,
    Item2vec,
    Companion,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Glove => "glove",
            BaselineKind::Knn => "knn",
            BaselineKind::Pair => "pair",
            BaselineKind::Item2vec => "item2vec",
            BaselineKind::Companion => "companion",
        }
    }
}

#[derive(Args, Debug)]
struct TrainBaselineArgs {
    #[arg(value_enum)]
    kind: BaselineKind,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Directory for `<kind>.ckpt.json` and `<kind>.predictions.jsonl`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args, Debug)]
struct TrainLmArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint path. Two-step runs also write `<stem>.unordered.json`.
    #[arg(long)]
    out: PathBuf,
    /// Unordered training on permutations before the ordered phase.
    #[arg(long)]
    two_step: bool,
    /// Train on explanation-augmented lines from this cache.
    #[arg(long, value_name = "CACHE")]
    with_explanations: Option<PathBuf>,
    /// Cache key of the teacher whose explanations to use.
    #[arg(long)]
    teacher_id: Option<String>,
    /// Ablation: one target per training line, no list generation.
    #[arg(long, conflicts_with_all = ["two_step", "with_explanations"])]
    no_lg: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    unordered_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Keep the last epoch instead of the best dev nDCG.
    #[arg(long)]
    no_select: bool,
}

#[derive(Args, Debug, Clone)]
struct PrefixArgs {
    #[arg(long, default_value = "plain")]
    prefix_mode: String,
    #[arg(long, default_value_t = 0)]
    n: usize,
    /// Seed for sampled prefixes; defaults to the run seed.
    #[arg(long)]
    prefix_seed: Option<u64>,
    /// With a full-length prefix, score the next position.
    #[arg(long = "probe-6")]
    probe_6: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    beam: Option<usize>,
    #[command(flatten)]
    prefix: PrefixArgs,
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Explanation cache (JSON lines); created if missing.
    #[arg(long)]
    cache: PathBuf,
    /// Explained corpus output, one line per list.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "mock")]
    teacher_url: Option<String>,
    /// Use the deterministic template teacher.
    #[arg(long)]
    mock: bool,
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Report JSON path; the table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SequentialEvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    model: Option<PathBuf>,
    /// Score existing prefixed predictions instead of generating.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    prefix: PrefixArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the generated records here.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Add per-frequency-bucket tables.
    #[arg(long)]
    buckets: bool,
    /// Bucket edges, overriding the configured ones.
    #[arg(long, value_delimiter = ',')]
    bucket_edges: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Map out-of-set slots to their nearest in-set concept.
    #[arg(long)]
    map_to_set: bool,
    #[arg(long)]
    vectors: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    match cli.command {
        Command::SynthGen(a) => commands::synth_gen(cfg, a),
        Command::BuildDataset(a) => commands::build_dataset(cfg, a),
        Command::TrainBaseline(a) => commands::train_baseline(cfg, a),
        Command::TrainLm(a) => commands::train_lm(cfg, a),
        Command::Generate(a) => commands::generate(cfg, a),
        Command::DistillExplanations(a) => commands::distill(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::SequentialEval(a) => commands::sequential_eval(cfg, a),
        Command::Report(a) => commands::report(cfg, a),
        Command::IngestExternal(a) => commands::ingest(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError {
                code: EXIT_CONFIG,
                kind: "config",
                field: None,
                message: e.render().to_string().trim().to_string(),
            };
            eprintln!("{}", err.to_json());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
