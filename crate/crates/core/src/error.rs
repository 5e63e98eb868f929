use thiserror::Error;

/// Errors raised by mesh construction, assembly, and linear algebra.
///
/// Nonlinear-solver outcomes (divergence, stagnation, line-search failure)
/// carry iteration history and live in [`crate::solve::SolveFailure`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("degenerate geometry in cell {cell}: {detail}")]
    DegenerateCell { cell: usize, detail: String },

    #[error("non-finite value while integrating over cell {cell}")]
    NumericFailure { cell: usize },

    #[error("vector is not tangent at the given point (|w.xi| = {dot:e})")]
    NonTangent { dot: f64 },

    #[error("normalization constant is not positive (theta = {theta:e})")]
    NonpositiveTheta { theta: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("Krylov solver hit the iteration cap ({iterations} iterations, residual {residual:e})")]
    KrylovMaxIters { iterations: usize, residual: f64 },

    #[error("Krylov solver stagnated in restart cycle {restart_cycle} (residual {residual:e})")]
    KrylovStagnation { restart_cycle: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
