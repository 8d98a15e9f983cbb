use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto process exit codes:
/// configuration problems exit with 2, everything else that aborts a run
/// exits with 3, and a completed run with failed checks exits with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("simulation blow-up at step {step} (t = {t}): |state| exceeded {limit:e}")]
    Blowup { step: usize, t: f64, limit: f64 },

    #[error("resource cap exceeded: {requested} steps requested, cap is {cap} (set LOCALTIME_CALC_CAP to raise)")]
    ResourceCap { requested: u128, cap: u128 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("norm diagnostic infinite: {0}")]
    Membership(String),

    #[error("hypothesis violation: {0}")]
    HypothesisViolation(String),

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
