//! Harness-level errors: file parsing, configuration, dataset assembly, and
//! everything propagated from the core library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("observation signal is zero; cannot calibrate noise against it")]
    DegenerateSignal,

    #[error("trace schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Core(#[from] precond::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
