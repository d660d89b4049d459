use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cutoff must be at least 1, got {0}")]
    InvalidCutoff(f64),

    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("mode sets do not match")]
    ModeSetMismatch,

    #[error("pad factor {pad} too small for a {factors}-fold product (need at least {needed})")]
    InsufficientPadding { pad: f64, factors: usize, needed: f64 },

    #[error("kernel window {window} cannot evaluate mode ({m0}, {m1})")]
    KernelWindow { window: i32, m0: i32, m1: i32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mode ({0}, {1}) is not covered by the dyadic partition")]
    Uncovered(i32, i32),

    #[error("numerical explosion at t = {time}: {reason}")]
    Explosion { time: f64, reason: String },

    #[error("time {0} is not on the stored grid")]
    OffGrid(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("novikov budget exceeded: {used} > {budget}")]
    NovikovBudget { used: f64, budget: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
