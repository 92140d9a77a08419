use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("class {class} out of range 0..{max}")]
    ClassOutOfRange { class: usize, max: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
