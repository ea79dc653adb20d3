use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use lrlm_core::corpus::{
    clean_documents, corpus_stats, exact_dedup, filter_by_script, filter_lang,
    filter_parallel_pairs, ingest_documents, near_dedup, score_pairs, train_langid,
    validate_against, CleanDocument, HashedNgramEmbedder, LangIdModel, ParallelPair, RawDocument,
    SiteManifest, StatsTargets, DEFAULT_JACCARD_THRESHOLD, DEFAULT_NUM_HASHES,
    DEFAULT_SIMILARITY_THRESHOLD,
};
use lrlm_core::tokenizer::{read_packed, PackingStats};

use crate::CliError;

#[derive(Args)]
pub struct CleanArgs {
    /// Line-oriented JSON corpus: {"id","source","text"} per line.
    #[arg(long)]
    input: PathBuf,
    /// Cleaned corpus output (same line format).
    #[arg(long)]
    output: PathBuf,
    /// Stats report path (JSON).
    #[arg(long)]
    stats: PathBuf,
    /// Ingest skip report path (JSON).
    #[arg(long)]
    skip_report: Option<PathBuf>,
    /// Site manifest to check document sources against.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Trained language-ID model; keeps documents classified as --keep.
    #[arg(long)]
    lang_model: Option<PathBuf>,
    /// Language code to keep when filtering.
    #[arg(long, default_value = "bn")]
    keep: String,
    /// Minimum classifier probability to keep a document.
    #[arg(long, default_value_t = 0.5)]
    min_prob: f64,
    /// Script-ratio fallback filter: keep docs with at least this fraction
    /// of letters in the Bangla block (used when no --lang-model given).
    #[arg(long)]
    script_ratio: Option<f64>,
    /// Run MinHash near-duplicate removal after exact dedup.
    #[arg(long)]
    near_dedup: bool,
    #[arg(long, default_value_t = DEFAULT_NUM_HASHES)]
    num_hashes: usize,
    #[arg(long, default_value_t = DEFAULT_JACCARD_THRESHOLD)]
    jaccard_threshold: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CleanReport {
    stats: lrlm_core::corpus::CorpusStats,
    ingest_total_lines: usize,
    ingest_skipped: usize,
    empty_after_clean: usize,
    exact_removed: usize,
    near_removed: usize,
    lang_dropped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    undeclared_sources: Vec<String>,
}

pub fn run_clean(args: CleanArgs) -> Result<(), CliError> {
    let (raw, ingest_report) = ingest_documents(&args.input)?;
    let sources: HashMap<String, String> = raw
        .iter()
        .map(|d: &RawDocument| (d.id.clone(), d.source.clone()))
        .collect();

    let undeclared_sources = match &args.manifest {
        Some(path) => {
            let manifest = SiteManifest::read(path)?;
            manifest.undeclared_sources(raw.iter().map(|d| d.source.as_str()))
        }
        None => Vec::new(),
    };

    let (cleaned, empty_after_clean) = clean_documents(&raw, "und");
    let (deduped, exact_removed) = exact_dedup(cleaned);

    let (filtered, lang_dropped) = match (&args.lang_model, args.script_ratio) {
        (Some(model_path), _) => {
            let model = LangIdModel::read(model_path)?;
            filter_lang(deduped, &model, &args.keep, args.min_prob)?
        }
        (None, Some(ratio)) => filter_by_script(deduped, ratio),
        (None, None) => (deduped, 0),
    };

    let (survivors, near_removed) = if args.near_dedup {
        near_dedup(filtered, args.num_hashes, args.jaccard_threshold)?
    } else {
        (filtered, 0)
    };

    let mut out = String::new();
    for doc in &survivors {
        let line = serde_json::json!({
            "id": doc.id,
            "source": sources.get(&doc.id).cloned().unwrap_or_default(),
            "text": doc.text,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    fs::write(&args.output, out).map_err(|e| CliError::runtime(format!("write {}: {e}", args.output.display())))?;

    let report = CleanReport {
        stats: corpus_stats(&survivors, exact_removed + near_removed),
        ingest_total_lines: ingest_report.total_lines,
        ingest_skipped: ingest_report.skipped_count(),
        empty_after_clean,
        exact_removed,
        near_removed,
        lang_dropped,
        undeclared_sources,
    };
    fs::write(&args.stats, serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?)
        .map_err(|e| CliError::runtime(format!("write {}: {e}", args.stats.display())))?;
    if let Some(path) = &args.skip_report {
        fs::write(path, serde_json::to_string_pretty(&ingest_report).map_err(|e| CliError::runtime(e.to_string()))?)
            .map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "docs": report.stats.doc_count,
            "exact_removed": exact_removed,
            "near_removed": near_removed,
            "lang_dropped": lang_dropped,
        })
    );
    Ok(())
}

#[derive(Args)]
pub struct StatsArgs {
    /// Cleaned corpus (line-oriented JSON), or a packed dataset with --packed.
    #[arg(long)]
    input: PathBuf,
    /// Input is a packed binary dataset; report packing statistics instead.
    #[arg(long)]
    packed: bool,
    /// Output report path (JSON). Defaults to stdout only.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Targets file (JSON {"doc_count", "avg_words_per_doc", "total_bytes"}).
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Compare against the published full-scale reference targets.
    #[arg(long)]
    reference_targets: bool,
}

pub fn run_stats(args: StatsArgs) -> Result<(), CliError> {
    if args.packed {
        let samples = read_packed(&args.input)?;
        let stats = PackingStats::from_samples(&samples);
        let text = serde_json::to_string_pretty(&stats).map_err(|e| CliError::runtime(e.to_string()))?;
        if let Some(path) = &args.output {
            fs::write(path, &text).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
        }
        println!("{text}");
        return Ok(());
    }

    let (raw, _) = ingest_documents(&args.input)?;
    let docs: Vec<CleanDocument> = raw
        .iter()
        .map(|d| CleanDocument {
            id: d.id.clone(),
            content_hash: lrlm_core::corpus::content_hash(&d.text),
            word_count: d.text.split_whitespace().count(),
            text: d.text.clone(),
            lang: "und".into(),
        })
        .collect();
    let stats = corpus_stats(&docs, 0);
    let targets = if args.reference_targets {
        Some(StatsTargets::reference())
    } else if let Some(path) = &args.targets {
        Some(crate::config::load_config::<StatsTargets>(path)?)
    } else {
        None
    };
    let deviations = targets.as_ref().map(|t| validate_against(&stats, t));
    let payload = serde_json::json!({
        "stats": stats,
        "deviations": deviations,
    });
    let text = serde_json::to_string_pretty(&payload).map_err(|e| CliError::runtime(e.to_string()))?;
    if let Some(path) = &args.output {
        fs::write(path, &text).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))?;
    }
    println!("{text}");
    Ok(())
}

#[derive(Args)]
pub struct LangidArgs {
    /// Labeled data: line-oriented JSON {"text", "lang"} per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 4096)]
    hash_buckets: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct LabeledLine {
    text: String,
    lang: String,
}

pub fn run_langid(args: LangidArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.input.display())))?;
    let mut labeled = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: LabeledLine = serde_json::from_str(line)
            .map_err(|e| CliError::usage(format!("{}:{}: {e}", args.input.display(), i + 1)))?;
        labeled.push((row.text, row.lang));
    }
    let model = train_langid(&labeled, args.hash_buckets, args.epochs, args.lr, args.seed)?;
    model.write(&args.output)?;
    println!(
        "{}",
        serde_json::json!({
            "classes": model.classes,
            "held_out_accuracy": model.held_out_accuracy,
            "model": args.output,
        })
    );
    Ok(())
}

#[derive(Args)]
pub struct PairFilterArgs {
    /// Pairs: line-oriented JSON {"id"?, "source_text", "target_text", "similarity"?}.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIMILARITY_THRESHOLD)]
    threshold: f64,
    /// Score missing similarities with the built-in hashed n-gram embedder.
    #[arg(long)]
    score_missing: bool,
}

pub fn run_pair_filter(args: PairFilterArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.input.display())))?;
    let mut pairs: Vec<ParallelPair> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: ParallelPair = serde_json::from_str(line)
            .map_err(|e| CliError::usage(format!("{}:{}: {e}", args.input.display(), i + 1)))?;
        pairs.push(pair);
    }
    if args.score_missing {
        score_pairs(&mut pairs, &HashedNgramEmbedder::default());
    }
    let total = pairs.len();
    let (kept, dropped) = filter_parallel_pairs(pairs, args.threshold)?;
    let mut out = String::new();
    for pair in &kept {
        out.push_str(&serde_json::to_string(pair).map_err(|e| CliError::runtime(e.to_string()))?);
        out.push('\n');
    }
    fs::write(&args.output, out).map_err(|e| CliError::runtime(format!("write {}: {e}", args.output.display())))?;
    println!(
        "{}",
        serde_json::json!({"total": total, "kept": kept.len(), "dropped": dropped, "threshold": args.threshold})
    );
    Ok(())
}
