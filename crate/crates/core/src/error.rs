//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RcrlError>;

#[derive(Debug, Error)]
pub enum RcrlError {
    /// Model construction or validation failed (bad shapes, non-stochastic rows, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An operation was called with out-of-range or inconsistent arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Fixed-point iteration hit the iteration cap before reaching tolerance.
    /// Carries the last iterate so callers can inspect how far it got.
    #[error("fixed point did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last_values: Vec<f64>,
    },

    /// A training run finished without ever seeing a feasible iterate.
    /// Carries the final policy logits and the per-iteration trace.
    #[error("no feasible policy found in {iterations} iterations")]
    NoFeasiblePolicy {
        iterations: usize,
        last_logits: Vec<f64>,
        trace: crate::opt::TrainingTrace,
    },

    /// A linear solve failed (singular or badly conditioned system).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Text-format parsing failed.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
