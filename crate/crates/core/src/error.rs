use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("degenerate removal: removing {k} of {n} sentences leaves nothing to compare")]
    DegenerateRemoval { k: usize, n: usize },

    #[error("pooling weights are all zero (decay too steep for {n} tokens)")]
    ZeroWeights { n: usize },

    #[error("needle source has {available} tokens, {required} required")]
    NeedleTooShort { required: usize, available: usize },

    #[error("update map is not monotone non-decreasing near t = {at}")]
    NonMonotoneUpdate { at: f64 },

    #[error("corpus {0} contains no documents")]
    EmptyCorpus(String),

    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),

    #[error("provider request for batch {batch} failed after {attempts} attempts: {message}")]
    Upstream {
        batch: usize,
        attempts: usize,
        message: String,
    },

    #[error("{failed} of {total} cells failed, above the 10% threshold")]
    PartialFailure { failed: usize, total: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
