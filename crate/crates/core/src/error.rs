use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("too many malformed lines ({malformed} of {total}); first offenders at lines {first_lines:?}")]
    MalformedCorpus {
        malformed: usize,
        total: usize,
        first_lines: Vec<usize>,
    },

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGrad { name: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("finetune error: {0}")]
    Finetune(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
