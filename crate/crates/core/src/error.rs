use thiserror::Error;

/// Errors shared across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("Cholesky factorization failed at leading minor {minor} (after jitter {jitter:e})")]
    Cholesky { minor: usize, jitter: f64 },
    #[error("Newton iteration did not converge after {0} steps")]
    NewtonDiverged(usize),
    #[error("solution became non-finite at t = {0}")]
    BlowUp(f64),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
