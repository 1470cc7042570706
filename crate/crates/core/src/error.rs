use thiserror::Error;

/// Errors surfaced by grid construction, assembly, and the linear algebra
/// layer. Solver-level failures (blow-up, non-convergence mid-run) carry
/// more state and live in [`crate::solver::StepError`].
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("coefficient value {value} at node {index} is not strictly positive")]
    NonpositiveCoefficient { index: usize, value: f64 },

    #[error("vector length {got} does not match grid with {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },

    #[error("helmholtz coefficient alpha = {0} must be strictly positive")]
    NonpositiveAlpha(f64),

    #[error("time step dt = {0} must be strictly positive")]
    NonpositiveDt(f64),

    #[error("{0}")]
    Unsupported(String),
}
