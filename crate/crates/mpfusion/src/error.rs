//! Error type shared across the crate.

/// Errors produced by model construction, particle arithmetic, Gaussian
/// algebra, and the experiment harness.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A vector or matrix argument has the wrong dimension.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every log-weight in a particle set is -inf (or invalid), so no
    /// normalized distribution exists. Signals filter divergence; callers
    /// decide how to recover.
    #[error("degenerate particle weights: no finite log-weight remains")]
    DegenerateWeights,

    /// A linear-algebra operation failed beyond repair.
    #[error("numerical failure in {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
