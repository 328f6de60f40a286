use thiserror::Error;

/// Errors raised by the loop-group engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("singular sample at index {index} (|det| = {det:e})")]
    Singular { index: usize, det: f64 },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("resonance at lambda = {lambda} for order {order} (condition {cond:e})")]
    Resonance { lambda: String, order: usize, cond: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("residual {name} = {value:e} exceeds {tol:e}")]
    Residual { name: String, value: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
