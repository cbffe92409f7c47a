use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("schedule violation: {0}")]
    ScheduleViolation(String),

    #[error("invalid step size: {0}")]
    StepSize(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("divergence at clock {clock}: {reason}")]
    Divergence { clock: usize, reason: String },

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("runtime failure: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
