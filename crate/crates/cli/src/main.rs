mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lrlm_core::benchmark::TrackingAllocator;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator::new();

/// Pipeline driver for the low-resource language model toolkit.
#[derive(Parser)]
#[command(name = "lrlm", version, about)]
struct Cli {
    /// Cap worker threads (default: all cores). Also honors LRLM_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a raw corpus: strip markup, deduplicate, filter by language.
    CorpusClean(commands::corpus::CleanArgs),
    /// Corpus statistics, optionally validated against manifest targets.
    CorpusStats(commands::corpus::StatsArgs),
    /// Train the hashed character n-gram language classifier.
    LangidTrain(commands::corpus::LangidArgs),
    /// Filter parallel pairs by similarity threshold.
    PairFilter(commands::corpus::PairFilterArgs),
    /// Train a WordPiece vocabulary.
    VocabTrain(commands::vocab::VocabTrainArgs),
    /// Encode a corpus and pack it into fixed-length samples.
    Pack(commands::vocab::PackArgs),
    /// Replaced-token-detection pretraining.
    Pretrain(commands::train::PretrainArgs),
    /// Fine-tune a checkpoint on a downstream task.
    Finetune(commands::train::FinetuneArgs),
    /// Evaluate a fine-tuned model and emit predictions.
    Evaluate(commands::eval::EvaluateArgs),
    /// Aggregate five task scores into the benchmark headline number.
    Blub(commands::eval::BlubArgs),
    /// Paired bootstrap significance between two prediction files.
    Significance(commands::eval::SignificanceArgs),
    /// Fine-tune across training-set sizes and emit the curve.
    SampleEfficiency(commands::train::SampleEfficiencyArgs),
    /// Measure wall time and peak memory of a standard workload.
    Profile(commands::profile::ProfileArgs),
}

/// Errors carrying their intended exit code. Usage/config problems exit 2,
/// runtime failures exit 1; both print a machine-readable JSON line.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub violations: Vec<String>,
    pub exit_code: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            violations: Vec::new(),
            exit_code: 2,
        }
    }

    pub fn violations(violations: Vec<String>) -> Self {
        CliError {
            message: "config validation failed".into(),
            violations,
            exit_code: 2,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            violations: Vec::new(),
            exit_code: 1,
        }
    }
}

impl From<lrlm_core::Error> for CliError {
    fn from(e: lrlm_core::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

pub fn cache_dir() -> PathBuf {
    std::env::var_os("LRLM_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".lrlm-cache"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli
        .threads
        .or_else(|| std::env::var("LRLM_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }

    let result = match cli.command {
        Command::CorpusClean(args) => commands::corpus::run_clean(args),
        Command::CorpusStats(args) => commands::corpus::run_stats(args),
        Command::LangidTrain(args) => commands::corpus::run_langid(args),
        Command::PairFilter(args) => commands::corpus::run_pair_filter(args),
        Command::VocabTrain(args) => commands::vocab::run_vocab_train(args),
        Command::Pack(args) => commands::vocab::run_pack(args),
        Command::Pretrain(args) => commands::train::run_pretrain(args),
        Command::Finetune(args) => commands::train::run_finetune(args),
        Command::Evaluate(args) => commands::eval::run_evaluate(args),
        Command::Blub(args) => commands::eval::run_blub(args),
        Command::Significance(args) => commands::eval::run_significance(args),
        Command::SampleEfficiency(args) => commands::train::run_sample_efficiency(args),
        Command::Profile(args) => commands::profile::run_profile(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": e.message,
                "violations": e.violations,
            });
            eprintln!("{payload}");
            ExitCode::from(e.exit_code)
        }
    }
}
