use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid branching mechanism: {0}")]
    InvalidMechanism(String),
    #[error("extinction integral diverges for this mechanism")]
    NonExtinct,
    #[error("root bracketing failed: {0}")]
    NoBracket(String),
    #[error("lower index {0} <= 1: dimensions are infinite")]
    IndexTooLow(f64),
    #[error("invalid excursion: {0}")]
    InvalidExcursion(String),
    #[error("time {time} outside [0, {zeta}]")]
    OutOfRange { time: f64, zeta: f64 },
    #[error("invalid offspring distribution: {0}")]
    InvalidOffspring(String),
    #[error("conditioned sampling gave up after {attempts} attempts (acceptance {acceptance:.3e})")]
    AttemptsExhausted { attempts: u64, acceptance: f64 },
    #[error("node cap {0} exceeded")]
    Truncated(usize),
    #[error("instance too large for exact enumeration: {0} points (cap {1})")]
    TooLarge(usize, usize),
    #[error("invalid metric tree: {0}")]
    InvalidMetricTree(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
