//! Subcommand driver for the `clinnote` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;

pub use config::{Provenance, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<clinnote::Error> for CliError {
    fn from(e: clinnote::Error) -> Self {
        match e {
            clinnote::Error::Config(_) | clinnote::Error::TooManyPlayers { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "clinnote", version, about = "Mortality prediction from nursing notes with per-word attributions")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML (or .json) run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for fold-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted outcome markers.
    Synth(SynthArgs),
    /// Apply the cohort rules and summarize the corpus.
    Cohort(CohortArgs),
    /// Cross-validated training.
    Train(TrainArgs),
    /// Attribute predictions of a trained fold to words.
    Attribute(AttributeArgs),
    /// Run the numerical self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0978)]
    pub positive_rate: f64,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub mean_len_pos: Option<f64>,
    #[arg(long)]
    pub mean_len_neg: Option<f64>,
    #[arg(long)]
    pub marker_strength: Option<f64>,
    /// Log-scale spread of note lengths.
    #[arg(long)]
    pub length_sigma: Option<f64>,
    /// Share of words drawn from the English stop list.
    #[arg(long)]
    pub stopword_rate: Option<f64>,
    /// Share of words replaced by marker words in a marked note.
    #[arg(long)]
    pub marker_rate: Option<f64>,
    /// CSV path; defaults to `<out-dir>/notes.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Notes CSV.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Map a logical column to a CSV header, e.g. `text=TEXT`.
    #[arg(long = "column", value_parser = config::parse_column)]
    pub columns: Vec<(String, String)>,
    #[arg(long)]
    pub min_stay_hours: Option<f64>,
    #[arg(long)]
    pub require_nursing: Option<bool>,
    #[arg(long)]
    pub window_hours: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CohortArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub stratified: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Loss weight of the death class; defaults to N_neg / N_pos per fold.
    #[arg(long)]
    pub class_weight: Option<f64>,
    /// One stop-word per line; the built-in English list otherwise.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, value_parser = parse_ci)]
    pub ci_method: Option<clinnote::eval::CiMethod>,
}

#[derive(Debug, Clone, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated patient ids, or `all`; requires a corpus.
    #[arg(long)]
    pub patients: Option<String>,
    /// A plain-text note to attribute instead of corpus patients.
    #[arg(long, conflicts_with = "patients")]
    pub note_file: Option<PathBuf>,
    /// Attribute at most this many patients (after sorting by id).
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Render smoothed values in heatmaps; `false` shows raw values.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub smoothed: bool,
    #[arg(long, value_parser = parse_target)]
    pub target: Option<clinnote::attribution::Target>,
    #[arg(long, value_parser = parse_reference_mode)]
    pub reference_mode: Option<clinnote::attribution::ReferenceMode>,
    #[arg(long, default_value_t = 0.5)]
    pub neutral_quantile: f64,
    #[arg(long, default_value_t = 0.99)]
    pub clamp_quantile: f64,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Words per class in the word cloud.
    #[arg(long, default_value_t = 50)]
    pub top: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Seeds to run every check under, e.g. `0..10` or `1,5,9`.
    #[arg(long, default_value = "0", value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[arg(long, default_value_t = 50)]
    pub gradient_instances: usize,
    #[arg(long, default_value_t = 100)]
    pub completeness_inputs: usize,
    /// Test hook: corrupt the analytic gradient.
    #[arg(long, value_parser = ["flip-gradient-sign"])]
    pub inject_fault: Option<String>,
}

fn parse_ci(s: &str) -> Result<clinnote::eval::CiMethod, String> {
    match s {
        "student-t" | "student_t" => Ok(clinnote::eval::CiMethod::StudentT),
        "normal" => Ok(clinnote::eval::CiMethod::Normal),
        _ => Err(format!("unknown CI method `{s}` (student-t, normal)")),
    }
}

fn parse_target(s: &str) -> Result<clinnote::attribution::Target, String> {
    match s {
        "probability" => Ok(clinnote::attribution::Target::Probability),
        "logit" => Ok(clinnote::attribution::Target::Logit),
        _ => Err(format!("unknown target `{s}` (probability, logit)")),
    }
}

fn parse_reference_mode(s: &str) -> Result<clinnote::attribution::ReferenceMode, String> {
    use clinnote::attribution::ReferenceMode;
    match s {
        "frequency-weighted" | "frequency_weighted_mean" => Ok(ReferenceMode::FrequencyWeightedMean),
        "unweighted" | "unweighted_mean" => Ok(ReferenceMode::UnweightedMean),
        _ => Err(format!("unknown reference mode `{s}` (frequency-weighted, unweighted)")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

/// Accepts `a..b` (half open) or a comma list.
fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let bad = || format!("expected a seed list like `0..10` or `1,2,3`, got `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok(SeedList((a..b).collect()));
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()
        .map(SeedList)
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
