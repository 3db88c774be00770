use thiserror::Error;

/// Errors produced by model construction and the analysis operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "degenerate constraint at x = {state:?}: the filter is active but \
         ||g(x)^T grad h(x)|| = {norm:.3e} < 1e-12 (h is not a strict CBF here)"
    )]
    DegenerateConstraint { state: Vec<f64>, norm: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported dimension n = {0} for boundary scanning")]
    UnsupportedDimension(usize),

    #[error("x_c is not an eigenvector of the closed-loop matrix (angle {angle:.3e} rad)")]
    NotAnEigenvector { angle: f64 },

    #[error("inconsistent instance: {0}")]
    InconsistentInstance(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
