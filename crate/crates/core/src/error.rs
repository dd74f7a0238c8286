use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gene panel error: {0}")]
    Panel(String),

    #[error("condition error: {0}")]
    Condition(String),

    #[error("gene selection error: {0}")]
    Selection(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the command-line tool: 2 malformed input,
    /// 3 gene selection, 4 numeric failure, 5 panel mismatch, 6 alignment,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } | Error::Config(_) | Error::Json(_) => 2,
            Error::Selection(_) => 3,
            Error::Numeric(_) => 4,
            Error::Panel(_) => 5,
            Error::Alignment(_) => 6,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
