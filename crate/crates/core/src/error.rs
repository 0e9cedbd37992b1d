use thiserror::Error;

/// Errors raised by the detection library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("power iteration did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("unsupported QAM order {0} (expected 4, 16 or 64)")]
    UnsupportedOrder(usize),

    #[error("entry {0} is not a constellation point")]
    NotAConstellationPoint(usize),

    #[error("exhaustive search over {0} candidates exceeds the 2^24 cap")]
    SearchSpaceTooLarge(u128),

    #[error("sample list is empty")]
    EmptySampleList,

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
