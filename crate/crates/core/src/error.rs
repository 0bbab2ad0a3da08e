//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by tensor kernels, solvers and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of operands do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A factor column (or its Gram diagonal) has zero norm where a positive
    /// denominator is required. Resolved upstream by zero-lock repair.
    #[error("degenerate column: {0}")]
    DegenerateColumn(String),

    /// An integer weight no longer fits in 64 bits.
    #[error("lambda overflow: unconstrained optimum {value} does not fit in i64")]
    LambdaOverflow { value: f64 },

    /// Dense materialization would exceed the configured element cap.
    #[error("dense size {size} exceeds cap {cap}")]
    DenseCapExceeded { size: u128, cap: u128 },

    /// An exhaustive oracle was asked to enumerate too many candidates.
    #[error("search space too large: {size} candidates exceed cap {cap}")]
    SearchSpaceTooLarge { size: u128, cap: u128 },

    /// Fit or a correlation-based metric is undefined for this input.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// Initialization scheme is not defined for this input order.
    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),
}

pub type Result<T> = std::result::Result<T, Error>;
