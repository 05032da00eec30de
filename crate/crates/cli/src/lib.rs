//! The `ucerf` command line: evaluation against an endpoint or an existing
//! prediction log, table building, dataset validation, generation and
//! corpus statistics.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use thiserror::Error;
use ucerf_core::corpus::CorpusError;
use ucerf_core::evaluate::EvalError;
use ucerf_core::metrics::PositiveClass;
use ucerf_core::pipeline::PipelineError;
use ucerf_core::predlog::LogError;
use ucerf_core::report::ReportError;
use ucerf_core::tasks::TaskKind;
use ucerf_core::uncertainty::CertaintyEstimator;
use ucerf_inference::{InferenceError, ScoringMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Endpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Endpoint(_) => EXIT_ENDPOINT,
        }
    }

    pub fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Config(_) => CliError::Usage(e.to_string()),
            InferenceError::Task(_) => CliError::Data(e.to_string()),
            _ => CliError::Endpoint(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend(_) => CliError::Endpoint(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    CorpusError,
    EvalError,
    LogError,
    ReportError,
    std::io::Error,
    serde_json::Error
);

#[derive(Debug, Parser)]
#[command(
    name = "ucerf",
    version,
    about = "Uncertainty-aware fairness benchmark for language models"
)]
#[command(
    after_help = "Settings resolve from flags, then the --config file (key = value lines), \
then UCERF_<KEY> environment variables, then defaults.\n\
Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a dataset against an endpoint (or read an existing log) and
    /// write the prediction log, metric report and table.
    Evaluate(EvaluateArgs),
    /// Build one ranked table from several prediction logs or reports.
    Score(ScoreArgs),
    /// Filter raw generated sentences and apply annotation consensus.
    Validate(ValidateArgs),
    /// Generate candidate sentences for occupation pairs with a chat model.
    Generate(GenerateArgs),
    /// Corpus diversity statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args, Default)]
pub struct DatasetArgs {
    /// Dataset file; repeat to merge several files.
    #[arg(long = "dataset", value_name = "PATH")]
    pub dataset: Vec<PathBuf>,
    /// jsonl or winobias; inferred from the file name when omitted.
    #[arg(long, value_name = "FORMAT")]
    pub format: Option<String>,
    /// Task type for WinoBias files whose names do not say type1/type2.
    #[arg(long, value_name = "TYPE")]
    pub winobias_type: Option<String>,
    /// Occupation registry CSV (occupation,pct_female); built-in BLS table otherwise.
    #[arg(long, value_name = "CSV")]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct EndpointArgs {
    /// Base URL of an OpenAI-compatible API, e.g. http://localhost:8000/v1.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    /// Response cache directory [default: <out>/cache].
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Maximum concurrent requests [default: 4].
    #[arg(long, value_name = "N")]
    pub concurrency: Option<usize>,
    /// Request timeout in seconds [default: 60].
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<u64>,
    /// Retries on 429, 5xx and transport errors [default: 4].
    #[arg(long, value_name = "N")]
    pub max_retries: Option<u32>,
    /// Base backoff delay in milliseconds [default: 500].
    #[arg(long, value_name = "MS")]
    pub retry_base_ms: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct MetricArgs {
    /// intrinsic or mcq.
    #[arg(long, value_name = "TASK")]
    pub task: Option<TaskKind>,
    /// Seed list: integers and inclusive ranges, e.g. 0..4 or 0,2,5 [default: 0..4].
    #[arg(long, value_name = "LIST")]
    pub seeds: Option<String>,
    /// perplexity, renyi, renyi:<alpha> or fisher-rao [default: perplexity].
    #[arg(long, value_name = "EST")]
    pub estimator: Option<CertaintyEstimator>,
    /// male-stereotyped or female-stereotyped [default: male-stereotyped].
    #[arg(long, value_name = "CONVENTION")]
    pub positive_class: Option<PositiveClass>,
    /// Histogram bins [default: 40].
    #[arg(long, value_name = "N")]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    /// Score from an existing prediction log instead of an endpoint.
    #[arg(long, value_name = "PATH")]
    pub from_log: Option<PathBuf>,
    /// Output directory [default: ucerf-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Prompt template file replacing the built-in template.
    #[arg(long, value_name = "PATH")]
    pub template_file: Option<PathBuf>,
    /// echo, stepwise or next_token [default: echo].
    #[arg(long, value_name = "MODE")]
    pub mode: Option<ScoringMode>,
    /// Size of the top-logprobs list requested [default: 20].
    #[arg(long, value_name = "N")]
    pub top_n: Option<usize>,
    /// Flat key = value settings file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Prediction logs (.jsonl, one model each) or metric reports (.json).
    #[arg(value_name = "INPUT", required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Output directory [default: ucerf-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// JSONL of raw sentences: {id, raw, target_occ, other_occ, task_type}.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Annotation CSV or JSONL; when given only consensus-kept sentences survive.
    #[arg(long, value_name = "PATH")]
    pub annotations: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub registry: Option<PathBuf>,
    /// Output directory [default: ucerf-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    /// Occupation pair as target:other; repeatable.
    #[arg(long = "pair", value_name = "TARGET:OTHER")]
    pub pairs: Vec<String>,
    /// Every admissible pair of the registry, in both directions.
    #[arg(long)]
    pub all_pairs: bool,
    /// Task types to generate: type1, type2 or both comma separated [default: type1,type2].
    #[arg(long, value_name = "LIST")]
    pub types: Option<String>,
    /// Minimum stereotype gap in percentage points [default: 10].
    #[arg(long, value_name = "PCT")]
    pub gap: Option<f64>,
    #[arg(long, value_name = "CSV")]
    pub registry: Option<PathBuf>,
    /// Output directory [default: ucerf-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Embedding JSONL ({id, vector}) for the dataset at the same position.
    #[arg(long = "embeddings", value_name = "PATH")]
    pub embeddings: Vec<PathBuf>,
    /// Also count near-duplicate sentence pairs.
    #[arg(long)]
    pub similar_pairs: bool,
    /// Word-difference threshold for near duplicates [default: 2].
    #[arg(long, value_name = "N")]
    pub max_word_diff: Option<usize>,
    /// Write stats.json (and similar_pairs.jsonl) to this directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

/// Long flag names of a subcommand, used to vet config file keys.
pub fn flag_names(subcommand: &str) -> Vec<String> {
    Cli::command()
        .find_subcommand(subcommand)
        .map(|c| {
            c.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| *l != "config" && *l != "help")
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Evaluate(a) => commands::evaluate(a, out),
        Command::Score(a) => commands::score(a, out),
        Command::Validate(a) => commands::validate(a, out),
        Command::Generate(a) => commands::generate(a, out),
        Command::Stats(a) => commands::stats(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
