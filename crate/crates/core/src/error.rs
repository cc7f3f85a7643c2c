//! Crate-wide error type.

use thiserror::Error;

/// Errors returned by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violated a domain precondition (empty vector, zero count, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A probability left [0, 1] by more than round-off can explain.
    #[error("value {value} outside [0, 1] by more than {tolerance:e}")]
    ProbabilityRange { value: f64, tolerance: f64 },

    /// Parameters failed validation (C < 2, K < 1, mismatched lengths, ...).
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The requested quantity is only defined for a different configuration,
    /// e.g. closed forms that are stated for the uniform class prior only.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Exact enumeration would exceed the configured term budget.
    #[error(
        "exact enumeration budget exceeded ({estimated_terms:.3e} terms > {budget:.3e}); \
         use the Monte Carlo estimator instead"
    )]
    BudgetExceeded { estimated_terms: f64, budget: f64 },

    /// Array shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// File or stream I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file did not parse as the expected format.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
