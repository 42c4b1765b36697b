use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("interval {index} is at the maximal depth {depth} and has no children")]
    LevelOverflow { index: String, depth: u32 },

    #[error("invalid dyadic index: {0}")]
    InvalidIndex(String),

    #[error("matrix is not positive definite: {0}")]
    NotSpd(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("interval {0} is not a member of the sparse family")]
    NotAMember(String),

    #[error("invalid input: {0}")]
    InvalidSpec(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("invariant violated on instance {id}: {check}")]
    InvariantViolation {
        id: usize,
        check: String,
        quarantine: Option<PathBuf>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl LabError {
    /// True for failures of a mathematical invariant, as opposed to bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, LabError::InvariantViolation { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}
