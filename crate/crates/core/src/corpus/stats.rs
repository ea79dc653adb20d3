use serde::{Deserialize, Serialize};

use super::clean::CleanDocument;

/// Exact corpus counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub total_bytes: u64,
    pub avg_words_per_doc: f64,
    pub duplicate_removed: usize,
}

pub fn corpus_stats(docs: &[CleanDocument], duplicate_removed: usize) -> CorpusStats {
    let doc_count = docs.len();
    let total_bytes: u64 = docs.iter().map(|d| d.text.len() as u64).sum();
    let total_words: u64 = docs.iter().map(|d| d.word_count as u64).sum();
    let avg_words_per_doc = if doc_count == 0 {
        0.0
    } else {
        total_words as f64 / doc_count as f64
    };
    CorpusStats {
        doc_count,
        total_bytes,
        avg_words_per_doc,
        duplicate_removed,
    }
}

/// Published full-scale reference statistics, used as manifest targets when
/// validating a reproduction run.
pub mod reference {
    /// Documents after preprocessing.
    pub const DOC_COUNT: f64 = 5.25e6;
    /// Mean whitespace-delimited words per document.
    pub const AVG_WORDS_PER_DOC: f64 = 306.66;
    /// Corpus size in bytes (27.5 GB).
    pub const TOTAL_BYTES: f64 = 27.5e9;
    /// Packed training samples.
    pub const PACKED_SAMPLES: f64 = 7.18e6;
    /// Mean packed sample length in tokens.
    pub const PACKED_AVG_LENGTH: f64 = 304.14;
    /// Total tokens after packing.
    pub const PACKED_TOTAL_TOKENS: f64 = 2.18e9;
}

/// Expected values for manifest validation. Any subset may be present.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StatsTargets {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_count: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_words_per_doc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_bytes: Option<f64>,
}

impl StatsTargets {
    /// Full-scale reference targets.
    pub fn reference() -> Self {
        StatsTargets {
            doc_count: Some(reference::DOC_COUNT),
            avg_words_per_doc: Some(reference::AVG_WORDS_PER_DOC),
            total_bytes: Some(reference::TOTAL_BYTES),
        }
    }
}

/// One target comparison: actual vs expected with signed relative deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Deviation {
    pub field: String,
    pub actual: f64,
    pub target: f64,
    pub relative: f64,
}

/// Compare stats against manifest targets, reporting every requested field.
pub fn validate_against(stats: &CorpusStats, targets: &StatsTargets) -> Vec<Deviation> {
    let mut out = Vec::new();
    let mut check = |field: &str, actual: f64, target: Option<f64>| {
        if let Some(target) = target {
            let relative = if target == 0.0 {
                if actual == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (actual - target) / target
            };
            out.push(Deviation {
                field: field.to_string(),
                actual,
                target,
                relative,
            });
        }
    };
    check("doc_count", stats.doc_count as f64, targets.doc_count);
    check(
        "avg_words_per_doc",
        stats.avg_words_per_doc,
        targets.avg_words_per_doc,
    );
    check("total_bytes", stats.total_bytes as f64, targets.total_bytes);
    out
}
