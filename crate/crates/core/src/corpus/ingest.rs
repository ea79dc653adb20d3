use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw crawled document as it arrives from the fetcher.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub source: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetched_at: Option<String>,
}

/// Skip accounting for one ingest run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_lines: usize,
    pub accepted: usize,
    /// `(line number, reason)`, 1-based, in file order.
    pub skipped: Vec<(usize, String)>,
}

impl IngestReport {
    pub fn skipped_count(&self) -> usize {
        self.skipped.len()
    }
}

/// Fraction of malformed lines above which the whole file is rejected.
const MALFORMED_FATAL_FRACTION: f64 = 0.10;

/// Read a line-oriented JSON corpus (`{"id", "source", "text"}` per line).
/// Malformed lines (bad JSON, missing or empty id, duplicate id) are counted
/// and skipped; more than 10% malformed is fatal.
pub fn ingest_documents(path: &Path) -> Result<(Vec<RawDocument>, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut report = IngestReport::default();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        match serde_json::from_str::<RawDocument>(&line) {
            Ok(doc) => {
                if doc.id.is_empty() {
                    report.skipped.push((line_no, "empty id".to_string()));
                } else if !seen_ids.insert(doc.id.clone()) {
                    report
                        .skipped
                        .push((line_no, format!("duplicate id {}", doc.id)));
                } else {
                    docs.push(doc);
                    report.accepted += 1;
                }
            }
            Err(e) => {
                report.skipped.push((line_no, format!("invalid json: {e}")));
            }
        }
    }

    if report.total_lines > 0 {
        let frac = report.skipped.len() as f64 / report.total_lines as f64;
        if frac > MALFORMED_FATAL_FRACTION {
            return Err(Error::MalformedCorpus {
                malformed: report.skipped.len(),
                total: report.total_lines,
                first_lines: report.skipped.iter().take(20).map(|(n, _)| *n).collect(),
            });
        }
    }
    Ok((docs, report))
}
