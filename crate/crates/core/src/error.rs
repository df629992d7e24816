use thiserror::Error;

/// Errors shared across the pipeline modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("rotation angle {angle} out of log domain (must be < pi)")]
    OutOfDomain { angle: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate window: no overlap between any pair of frames")]
    DegenerateWindow,
    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
