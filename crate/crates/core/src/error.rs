use thiserror::Error;

/// Errors produced by the degradation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("degenerate variance at episode offset {offset}")]
    DegenerateVariance { offset: usize },

    #[error("covariance is not positive definite even with ridge {lambda:e}")]
    NotPositiveDefinite { lambda: f64 },

    #[error("no bootstrap distribution for `{kind}` at window length {n}")]
    NotTuned { kind: String, n: usize },

    #[error(
        "tuned p-value threshold {threshold:e} equals the bootstrap resolution {floor:e}: \
         the monitor could never reject. Either increase B or reduce significance requirements."
    )]
    Resolution { threshold: f64, floor: f64 },

    #[error("monitor already fired; reset before feeding more samples")]
    TerminalState,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }
}
