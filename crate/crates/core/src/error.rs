use thiserror::Error;

/// Errors surfaced by model fitting, scoring, and data handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Input lies outside the domain of a potential or transform.
    #[error("domain violation: {0}")]
    Domain(String),

    /// A constructor was given an invalid parameter value.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Mismatched lengths or dimensions between paired inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// All belief mass received zero weight, so weighted moments are undefined.
    #[error("degenerate belief: {0}")]
    DegenerateBelief(String),

    /// An operation needs more data than it was given.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Kernel matrix stayed non positive definite at the jitter cap.
    #[error("kernel matrix is not positive definite (jitter cap {cap:.3e} reached)")]
    IllConditionedKernel { cap: f64 },

    /// A numerical guard tripped (negative variance beyond slack, log of
    /// a non-positive value, non-finite score).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Dataset file could not be read or parsed.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
