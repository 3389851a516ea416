use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("eigensolver failed to converge for state {state} after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        state: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("singular linear system at row {row}")]
    Singular { row: usize },

    #[error("divergence detected at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("{fraction:.4} of particles left the grid domain (limit 0.01)")]
    ExitFraction { fraction: f64 },

    #[error("no estimator bin reached the minimum count of {min_count}")]
    AllBinsInvalid { min_count: usize },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("characteristic function is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("wavefunction node detected: {0}")]
    NodeFormation(String),
}

impl LabError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
