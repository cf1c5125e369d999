use thiserror::Error;

/// Errors raised by the oracles, samplers and metrics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time t = {t} is outside [0, {limit})")]
    TimeOutOfRange { t: f64, limit: f64 },

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite score for particle {particle} at t = {t}, z = {z:?}")]
    NonFiniteScore { particle: usize, t: f64, z: Vec<f64> },

    #[error("ODE step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("particle counts differ: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("{n} particles exceeds the cap of {cap}")]
    TooManyParticles { n: usize, cap: usize },

    #[error("need at least {min} particles, got {got}")]
    TooFewParticles { min: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
