use thiserror::Error;

/// Errors raised by the solver, the adjoint machinery and the optimizers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("assumption {item} violated: {detail}")]
    AssumptionViolation { item: &'static str, detail: String },

    #[error("stability warning: CFL number {cfl:.3} exceeds 1 at t = {t:.6}")]
    Stability { cfl: f64, t: f64 },

    #[error("time grid mismatch: {0}")]
    TimeGridMismatch(String),

    #[error("trajectory replay failed: {0}")]
    Replay(String),

    #[error("line search stalled at iteration {iteration} after {shrinks} shrinks (cost {cost:.6e}, gradient norm {grad_norm:.6e})")]
    LineSearchStall {
        iteration: usize,
        shrinks: usize,
        cost: f64,
        grad_norm: f64,
    },

    #[error("snapshot format error: {0}")]
    Format(String),
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Stability { .. } | Error::LineSearchStall { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
