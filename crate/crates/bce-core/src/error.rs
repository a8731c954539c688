//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A vector or matrix did not have the dimension the operation requires.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A matrix that must be symmetric positive definite failed its Cholesky
    /// factorization.
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    /// A matrix inversion or linear solve hit a (numerically) singular matrix.
    #[error("singular matrix in {0}")]
    Singular(&'static str),

    /// A parameter was outside the domain the model is defined on.
    #[error("parameter out of domain: {0}")]
    OutOfDomain(&'static str),

    /// A configuration value failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    /// The training loss became NaN or infinite.
    #[error("training diverged at step {step} (loss not finite)")]
    Diverged { step: usize },

    /// Input data was degenerate (e.g. an all-zero observation where a scale
    /// estimate is required).
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
