use thiserror::Error;

/// Errors raised across the inference engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("index ({row}, {col}) out of range for dimension {dim}")]
    IndexOutOfRange { row: usize, col: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("point {index} lies outside the mesh")]
    PointOutsideMesh { index: usize },

    #[error("hyperparameter optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
