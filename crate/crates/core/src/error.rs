//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Case file could not be tokenized / lexed at the given position.
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    /// Case file parsed but violates a data invariant.
    #[error("semantic error: {0}")]
    Semantic(String),

    /// Requested builtin case does not exist.
    #[error("unknown case `{0}` (available: case3, case5, case118, case300)")]
    UnknownCase(String),

    /// Unsupported report format.
    #[error("unsupported format `{0}`")]
    UnsupportedFormat(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    /// Dimension mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix singular to working precision.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Input expected to be Hermitian is not.
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    /// Problem construction failed (infeasible bounds, disconnected network, ...).
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// The variational state lies in the numerical null space of the encoded matrix.
    #[error("singular direction: variational state annihilated by the system matrix")]
    SingularDirection,

    /// Inner variational loop exhausted its budget far from the cost target.
    /// Carries the best solution and parameters seen so far.
    #[error("inner solver did not converge: final cost {final_cost:.3e} above target")]
    InnerNonConvergence {
        final_cost: f64,
        best_solution: Vec<f64>,
        best_params: Vec<f64>,
        iterations: usize,
    },

    /// Line search or optimizer stalled; carries the best point seen.
    #[error("optimizer stalled: {reason}")]
    OptimizerStalled {
        reason: String,
        best_x: Vec<f64>,
        best_value: f64,
    },

    /// Objective or gradient returned a non-finite value.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// Outer loop iterate exceeded the overflow guard.
    #[error("interior point iteration diverged at iteration {iteration} (objective {objective:.3e})")]
    Diverged { iteration: usize, objective: f64 },

    /// A linear-solver backend failed inside the outer loop.
    #[error("backend failure at outer iteration {iteration}: {source}")]
    Backend {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
