use thiserror::Error;

/// Errors produced by the detection library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("branching ratio n = {0} is not subcritical (n must be < 1)")]
    Critical(f64),

    #[error("infeasible target size: {0}")]
    InfeasibleTarget(String),

    #[error("invalid event series: {0}")]
    InvalidSeries(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("empty search window [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("undefined volatility: local volatility is zero")]
    UndefinedVolatility,

    #[error("mismatched series: {0}")]
    Mismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
