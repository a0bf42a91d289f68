use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("grid mismatch: expected {expected} coefficients, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("wavevector ({0}, {1}) is outside the retained mode set")]
    ModeOutOfRange(i64, i64),

    #[error("non-finite field at t = {time} (max |field| before failure = {max_abs:e})")]
    NonFinite { time: f64, max_abs: f64 },

    #[error("{0}")]
    Config(String),

    #[error("empty sample set: {0}")]
    EmptySample(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
