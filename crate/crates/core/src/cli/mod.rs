//! The `laclip` command line.
//!
//! Exit codes: 0 on success, 2 on usage or validation errors (nothing is
//! written), 1 on runtime failures. Settings resolve as flags, then the
//! matching section of `--config`, then built-in defaults; every command
//! writes a manifest with the merged result.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::encoder::TrainMode;
use crate::eval::FewShotMethod;
use crate::textaug::EdaOp;

pub use config::FileConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or inputs; detected before any output is written.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

pub(crate) fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

pub(crate) fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "laclip",
    version,
    about = "Caption rewriting, contrastive training and transfer evaluation at desk scale"
)]
pub struct Cli {
    /// TOML file with per-command sections ([rewrite], [augment_eda], [backtranslate], [synth], [train], [eval])
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel evaluation (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Log filter, e.g. warn, info, laclip_core=debug
    #[arg(long, global = true, value_name = "FILTER", default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite captions with in-context examples from each strategy
    Rewrite(RewriteArgs),
    /// Add EDA rewrites (baseline augmentation)
    AugmentEda(EdaArgs),
    /// Add back-translation rewrites (baseline augmentation)
    Backtranslate(BacktranslateArgs),
    /// Generate a synthetic paired dataset
    Synth(SynthArgs),
    /// Train the reference encoders
    Train(TrainArgs),
    /// Zero-shot classification accuracy
    EvalZeroshot(ZeroShotArgs),
    /// Few-shot episodes with a 95% confidence interval
    EvalFewshot(FewShotArgs),
    /// Linear probe with a regularization sweep
    EvalLinear(LinearArgs),
    /// Print evaluation reports as a table
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum CompletionKind {
    /// Deterministic in-process backend (offline runs and tests)
    Fixture,
    /// HTTP endpoint from COMPLETION_ENDPOINT / COMPLETION_API_KEY
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum TranslatorKind {
    /// Returns the input unchanged
    Identity,
    /// HTTP endpoint from TRANSLATE_ENDPOINT
    Http,
}

#[derive(Debug, Args)]
pub struct RewriteArgs {
    /// Caption records (JSON lines with id, image_ref, caption)
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Augmented records to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Comma-separated subset of chatgpt,bard,mscoco,human
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub strategies: Option<Vec<String>>,
    /// Sampling temperature of the completion backend [default: 0.9]
    #[arg(long = "temp", value_name = "T")]
    pub temperature: Option<f64>,
    /// Maximum in-flight backend requests [default: 4]
    #[arg(long, value_name = "N")]
    pub concurrency: Option<usize>,
    /// Retries per rewrite after a backend error [default: 3]
    #[arg(long, value_name = "N")]
    pub max_retries: Option<u32>,
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Completion cache log (created if missing)
    #[arg(long, value_name = "FILE")]
    pub cache: Option<PathBuf>,
    /// Completion backend [default: http]
    #[arg(long, value_enum)]
    pub backend: Option<CompletionKind>,
}

#[derive(Debug, Args)]
pub struct EdaArgs {
    /// Caption or augmented records
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// sr, ri, rs, rd or composite [default: composite]
    #[arg(long, value_name = "OP", value_parser = parse_eda_op)]
    pub op: Option<EdaOp>,
    /// Rewrites added per record [default: 4]
    #[arg(long, value_name = "N")]
    pub n_aug: Option<usize>,
    /// Rate used for all four operations [default: 0.1]
    #[arg(long, value_name = "RATE")]
    pub alpha: Option<f64>,
    /// Synonym table (word<TAB>syn1,syn2); defaults to the bundled table
    #[arg(long, value_name = "FILE")]
    pub synonyms: Option<PathBuf>,
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

fn parse_eda_op(s: &str) -> Result<EdaOp, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct BacktranslateArgs {
    /// Caption or augmented records
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Comma-separated pivot languages [default: es,fr,de,it]
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub languages: Option<Vec<String>>,
    /// Translation backend [default: http]
    #[arg(long, value_enum)]
    pub backend: Option<TranslatorKind>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "synth")]
    pub out_dir: PathBuf,
    /// Number of classes [default: 32]
    #[arg(long, value_name = "N")]
    pub classes: Option<usize>,
    /// Samples per class, train and test together [default: 64]
    #[arg(long, value_name = "N")]
    pub per_class: Option<usize>,
    /// Image feature dimension [default: 64]
    #[arg(long, value_name = "D")]
    pub dim: Option<usize>,
    /// Feature noise around each class mean [default: 0.6]
    #[arg(long, value_name = "SIGMA")]
    pub noise: Option<f64>,
    /// Paraphrase rewrites per training record [default: 4]
    #[arg(long, value_name = "M")]
    pub rewrites: Option<usize>,
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Augmented training records
    #[arg(long = "in", value_name = "FILE", default_value = "synth/train.jsonl")]
    pub input: PathBuf,
    /// Image feature sidecar
    #[arg(long, value_name = "FILE", default_value = "synth/features.bin")]
    pub features: PathBuf,
    /// Output directory for checkpoint.bin, metrics.csv and manifest.json
    #[arg(long, value_name = "DIR", default_value = "run")]
    pub out_dir: PathBuf,
    /// Text objective [default: clip]
    #[arg(long, value_enum)]
    pub mode: Option<TrainMode>,
    /// [default: 10]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// [default: 256]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 0.001]
    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,
    /// Decoupled weight decay [default: 0.5]
    #[arg(long, value_name = "WD")]
    pub weight_decay: Option<f64>,
    /// Tokenizer vocabulary size [default: 49408]
    #[arg(long, value_name = "N")]
    pub vocab_size: Option<usize>,
    /// Shared embedding width [default: 64]
    #[arg(long, value_name = "D")]
    pub embed_dim: Option<usize>,
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

/// Inputs shared by the evaluation commands.
#[derive(Debug, Args)]
pub struct EvalInputs {
    /// Trained checkpoint; without it raw features are used where possible
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Image feature sidecar
    #[arg(long, value_name = "FILE", default_value = "synth/features.bin")]
    pub features: PathBuf,
    /// JSON with class_names and an id-to-class labels map
    #[arg(long, value_name = "FILE", default_value = "synth/labels.json")]
    pub labels: PathBuf,
    /// Report file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[command(flatten)]
    pub common: EvalInputs,
    /// Records whose images are classified
    #[arg(long = "in", value_name = "FILE", default_value = "synth/test.jsonl")]
    pub input: PathBuf,
    /// default (7 generic), training or paraphrase (lists stored with the labels)
    #[arg(long, value_name = "SET")]
    pub templates: Option<String>,
    /// Custom template with a {class} slot; repeatable, overrides --templates
    #[arg(long = "template", value_name = "TEXT")]
    pub template: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FewShotArgs {
    #[command(flatten)]
    pub common: EvalInputs,
    /// Record files pooled into one sample set; repeatable
    #[arg(long = "in", value_name = "FILE", required = true)]
    pub input: Vec<PathBuf>,
    /// [default: 600]
    #[arg(long, value_name = "N")]
    pub episodes: Option<usize>,
    /// [default: 5]
    #[arg(long, value_name = "N")]
    pub way: Option<usize>,
    /// [default: 5]
    #[arg(long, value_name = "N")]
    pub shot: Option<usize>,
    /// Query samples per class [default: 15]
    #[arg(long, value_name = "N")]
    pub query: Option<usize>,
    /// [default: prototypical]
    #[arg(long, value_enum)]
    pub method: Option<FewShotMethod>,
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LinearArgs {
    #[command(flatten)]
    pub common: EvalInputs,
    #[arg(long, value_name = "FILE", default_value = "synth/train.jsonl")]
    pub train: PathBuf,
    /// Validation records; split off the training records when absent
    #[arg(long, value_name = "FILE")]
    pub val: Option<PathBuf>,
    #[arg(long, value_name = "FILE", default_value = "synth/test.jsonl")]
    pub test: PathBuf,
    /// Share of training records held out for validation [default: 0.2]
    #[arg(long, value_name = "F")]
    pub val_fraction: Option<f64>,
    /// L-BFGS iteration cap [default: 500]
    #[arg(long, value_name = "N")]
    pub max_iter: Option<usize>,
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report files
    #[arg(value_name = "REPORT", required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write the table here
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// The clap command tree, exposed for help rendering.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    let _ = writeln!(std::io::stderr(), "\n{}", command().render_help());
                    2
                }
            };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "laclip: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn usage_error_is_two() {
        assert_eq!(run(["laclip", "frobnicate"]), 2);
        assert_eq!(run(["laclip", "train", "--epochs", "many"]), 2);
    }

    #[test]
    fn help_is_zero() {
        assert_eq!(run(["laclip", "--help"]), 0);
    }
}
