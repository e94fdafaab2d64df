//! Error type shared by all library modules.

use thiserror::Error;

/// Errors produced by construction and solver routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Inputs violated a precondition (non-finite entries, asymmetry, bad parameters).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two operands had incompatible sizes.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A requested allocation or problem size exceeded a configured cap.
    #[error("capacity exceeded in {context}: requested {requested}, cap {cap}")]
    Capacity {
        context: &'static str,
        requested: usize,
        cap: usize,
    },

    /// A matrix did not have the rank required by the operation.
    #[error("rank deficient: numerical rank {rank}, required {required}")]
    RankDeficient { rank: usize, required: usize },

    /// An iterative routine produced a non-finite value or failed to make progress.
    #[error("numerical failure at iteration {iteration}: {detail}")]
    NumericalFailure { iteration: usize, detail: String },

    /// A dataset-level operation received no data points.
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    /// Schedule file I/O and format violations.
    #[error("schedule file: {0}")]
    ScheduleFormat(String),

    /// Underlying I/O error (schedule persistence).
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
