use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): corners must be finite with x2 > x1 and y2 > y1")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("average precision is undefined: no ground truth in any category")]
    NoGroundTruth,

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("gradient check failed: max relative error {max_rel_err:e} exceeds {tolerance:e}")]
    GradCheck { max_rel_err: f64, tolerance: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            reason: reason.into(),
        }
    }
}
