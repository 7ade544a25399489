use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the relation extraction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A document violates the DocRED schema or the corpus invariants.
    #[error("schema error in document `{doc_id}`: {message}")]
    Schema { doc_id: String, message: String },

    /// Invalid configuration (dimensions, chunking, vocabulary, paths).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke the documented precondition of an operation.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("missing soft label for document `{doc_id}` pair ({head}, {tail})")]
    MissingSoftLabel {
        doc_id: String,
        head: usize,
        tail: usize,
    },

    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("teacher fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn schema(doc_id: &str, message: impl Into<String>) -> Self {
        Error::Schema {
            doc_id: doc_id.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
