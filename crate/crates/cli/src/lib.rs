//! Command-line pipeline: capture, eval, selectivity, decode, report, fit.
//!
//! Every subcommand reads and writes files only, so captures produced by an
//! external exporter can replace `capture`. A run directory (`--out-dir`)
//! holds one model under one condition:
//!
//! ```text
//! <out-dir>/captures/manifest.json   capture
//! <out-dir>/accuracy.{json,csv}      eval
//! <out-dir>/selectivity.{json,csv}   selectivity
//! <out-dir>/decode.{json,csv}        decode
//! <out-dir>/separation.json          decode
//! ```

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tomprobe_core::corpus::Condition;
use tomprobe_core::decoder::{DEFAULT_C, DEFAULT_REPEATS};

mod commands;

pub use commands::execute;

pub const THREADS_ENV: &str = "PROBE_THREADS";
pub const CAPTURES_DIR: &str = "captures";
pub const FIT_JSON: &str = "fit.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tomprobe_core::Error),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    /// 1 for analysis failures, 2 for I/O and configuration problems.
    pub fn exit_code(&self) -> i32 {
        use tomprobe_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_io_or_config() => 2,
            CliError::Core(E::Corpus { .. } | E::EmptyCorpus) => 2,
            CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tomprobe", version, about = "Belief-state probing of causal language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the model on every belief question and write captures plus a manifest.
    Capture(ModelArgs),
    /// Forced-choice accuracy on fact and belief questions.
    Eval(ModelArgs),
    /// Per-dimension Mann-Whitney tests on question-averaged captures.
    Selectivity(RunConfig),
    /// Layer-wise logistic-regression decoding of trial type.
    Decode(DecodeArgs),
    /// Figures and report.json across run directories.
    Report(ReportArgs),
    /// Exponential fit of peak selectivity against false-belief accuracy.
    Fit(FitArgs),
    /// Check a capture directory against the interchange format.
    Validate(ValidateArgs),
    /// Write a seeded GPT-2-shaped checkpoint directory.
    SynthModel(SynthArgs),
}

/// Shared run configuration; flag names mirror the field names.
#[derive(Debug, Clone, Args, Serialize)]
pub struct RunConfig {
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub corpus_path: Option<PathBuf>,
    #[arg(long, default_value_t = Condition::Intact)]
    pub condition: Condition,
    /// Seeds the shuffle control and the decoder splits.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Inverse L2 regularisation strength.
    #[arg(long, default_value_t = DEFAULT_C)]
    pub c: f64,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads; PROBE_THREADS takes precedence.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub config: RunConfig,
    /// Name recorded in outputs; defaults to the model directory name.
    #[arg(long)]
    pub model_name: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub config: RunConfig,
    /// Z-score features with training-set statistics.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories to include.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Models forming the "large" group of the t-tests.
    #[arg(long, num_args = 1..)]
    pub large: Vec<String>,
    #[arg(long)]
    pub welch: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub captures_dir: PathBuf,
    /// Also check that the captures cover this corpus exactly.
    #[arg(long)]
    pub corpus_path: Option<PathBuf>,
    #[arg(long, default_value_t = Condition::Intact)]
    pub condition: Condition,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Directory holding vocab.json and merges.txt.
    #[arg(long)]
    pub tokenizer_dir: PathBuf,
    #[arg(long, default_value_t = tomprobe_core::runtime::synthetic::FIXTURE_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 768)]
    pub d_model: usize,
    #[arg(long, default_value_t = 12)]
    pub heads: usize,
    #[arg(long, default_value_t = 1024)]
    pub context: usize,
}

impl RunConfig {
    /// Hex SHA-256 of the configuration. Thread count is excluded since it
    /// never changes outputs.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Thread count from PROBE_THREADS, else `--threads`, else rayon's default.
    pub fn effective_threads(&self) -> CliResult<Option<usize>> {
        let n = match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Config(format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
            ),
            Err(_) => self.threads,
        };
        if n == Some(0) {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        Ok(n)
    }

    fn check(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "--alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(CliError::Config(format!("--c must be positive, got {}", self.c)));
        }
        if self.repeats == 0 {
            return Err(CliError::Config("--repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. The one-line summary goes to stdout, errors to
/// stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
