//! Shared numerical kernels.

mod newton;
mod sparse;

pub use newton::{finite_difference_jacobian, newton_solve, NewtonReport, MAX_HALVINGS};
pub use sparse::{bicgstab, solve_sparse, CsrMatrix, IterativeSolution, DENSE_FALLBACK_MAX};

#[derive(Debug, Clone, thiserror::Error)]
pub enum NumericsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("linear solver did not converge after {iterations} iterations ({reason}); residual {residual_norm:e}")]
    NoConvergence {
        residual_norm: f64,
        iterations: usize,
        reason: String,
    },
    #[error("newton did not converge ({reason}) after {} iterations; residual {:e}", report.iterations, report.final_residual_norm)]
    NewtonFailure { report: NewtonReport, reason: String },
}
