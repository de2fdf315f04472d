use thiserror::Error;

/// Errors raised by the kinetic solver library.
#[derive(Debug, Error)]
pub enum KineticsError {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("phase point outside the domain: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("kernel evaluated on its singular set (v = u)")]
    SingularKernel,

    #[error(
        "{solver} did not converge after {iterations} iterations (last change {last_change:.3e})"
    )]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("bootstrap step underflow at lambda = {lambda:.4e} (measured C = {measured_c:.4e})")]
    StepUnderflow { lambda: f64, measured_c: f64 },

    #[error("outer nonlinear iteration diverged at step {iteration}; try a smaller delta")]
    OuterDivergence { iteration: usize },

    #[error("march blew up at step {step}: norm {norm:.3e} exceeds 10x the initial {initial:.3e}")]
    BlowUp {
        step: usize,
        norm: f64,
        initial: f64,
    },

    #[error("decay fit rejected: {0}")]
    FitRejected(String),

    #[error("modified multiplier not positive (min {min:.4e}); wall force too large")]
    MultiplierNotPositive { min: f64 },

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KineticsError>;

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> KineticsError {
    KineticsError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}
