//! Error type shared across the pipeline.

use thiserror::Error;

/// Errors raised by ingest, training, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv source unreadable: {0}")]
    Unreadable(String),

    #[error("missing or malformed header: {0}")]
    BadHeader(String),

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("degenerate training input: {0}")]
    DegenerateInput(String),

    #[error("invalid hyperparameter {key} for {family}: {reason}")]
    InvalidHyperparameter {
        family: String,
        key: String,
        reason: String,
    },

    #[error("invalid fold count: {0}")]
    InvalidFolds(String),

    #[error("empty search space: {0}")]
    EmptySearchSpace(String),

    #[error("no classifier exceeded threshold")]
    NoClassifierSelected,

    #[error("empty tier {0} dataset")]
    EmptyTier(u8),

    #[error("insufficient features: record {0} does not satisfy tier 1")]
    InsufficientFeatures(String),

    #[error("training datasets overlap: {0}")]
    DatasetOverlap(String),

    #[error("AUC undefined: {0}")]
    AucUndefined(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the index of the fold it occurred in.
    pub fn in_fold(self, fold: usize) -> Self {
        Error::InFold {
            fold,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
