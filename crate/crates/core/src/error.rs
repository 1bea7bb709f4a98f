//! Error types shared across the identification pipeline.

use thiserror::Error;

/// Errors produced by system generation, simulation, estimation and recovery.
#[derive(Debug, Error)]
pub enum SysIdError {
    /// Mismatched or invalid matrix/vector dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A stated precondition of an operation does not hold (e.g. N < 2T).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A matrix required to be invertible is singular at the requested point.
    #[error("singular system: {0}")]
    Singular(String),

    /// A factorization detected rank deficiency.
    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// SGD iterates blew up; the step size is too large.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// The Markov estimate is too degenerate to pick matching frequencies.
    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    /// I/O or (de)serialization failure on an artifact file.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SysIdError>;

impl From<std::io::Error> for SysIdError {
    fn from(e: std::io::Error) -> Self {
        SysIdError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SysIdError {
    fn from(e: serde_json::Error) -> Self {
        SysIdError::Io(e.to_string())
    }
}
