use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid probability {value} (must lie in [0, 1])")]
    InvalidProbability { value: f64 },

    #[error("block count {k} is invalid for {n} nodes")]
    InvalidBlockCount { k: usize, n: usize },

    #[error("fold count {v} is invalid for {n} nodes")]
    InvalidFoldCount { v: usize, n: usize },

    #[error("block size {index} rounds to zero (degenerate block)")]
    DegenerateBlock { index: usize },

    #[error("label {label} out of range for {k} blocks")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("training mask has no observed dyads")]
    EmptyMask,

    #[error("cell set is empty")]
    EmptyCellSet,

    #[error("network has no edges")]
    EmptyNetwork,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
