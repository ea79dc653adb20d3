//! Corpus curation: ingestion, markup stripping, exact and near
//! deduplication, language-ID filtering, parallel-pair similarity filtering,
//! and statistics with manifest validation.

mod clean;
mod dedup;
mod ingest;
mod langid;
mod manifest;
mod parallel;
mod stats;

pub use clean::{
    clean_document, clean_documents, collapse_whitespace, content_hash, strip_markup, CleanDocument,
};
pub use dedup::{
    estimate_jaccard, exact_dedup, exact_jaccard, minhash_signature, near_dedup, word_shingles,
    DEFAULT_JACCARD_THRESHOLD, DEFAULT_NUM_HASHES, DEFAULT_SHINGLE_WORDS,
};
pub use ingest::{ingest_documents, IngestReport, RawDocument};
pub use langid::{
    bangla_script_ratio, filter_by_script, filter_lang, train_langid, LangIdModel,
    DEFAULT_NGRAM_ORDERS,
};
pub use manifest::{SiteEntry, SiteManifest, CATEGORIES};
pub use parallel::{
    cosine, filter_parallel_pairs, score_pairs, EmbeddingProvider, HashedNgramEmbedder,
    ParallelPair, DEFAULT_SIMILARITY_THRESHOLD,
};
pub use stats::{corpus_stats, reference, validate_against, CorpusStats, Deviation, StatsTargets};
