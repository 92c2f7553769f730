use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: malformed NPY container: {reason}")]
    Npy { path: PathBuf, reason: String },

    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("token {index} has zero norm")]
    ZeroToken { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("invalid mask: {0}")]
    Mask(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{band} band is empty (r_near = {r_near}, r_far = {r_far})")]
    EmptyBand {
        band: &'static str,
        r_near: usize,
        r_far: usize,
    },

    #[error("need at least 2 correlogram classes with delta <= {delta_max}, found {found}")]
    TooFewClasses { delta_max: usize, found: usize },

    #[error("no valid SRSS triplet: {0}")]
    NoValidTriplet(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite metric value for image {id}")]
    NonFiniteValue { id: String },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("only {found} encoder(s) present in both inputs, need at least 2")]
    TooFewJoined { found: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn npy(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Npy {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
