use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HetemError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HetemError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric degeneracy: {0}")]
    Degenerate(String),

    #[error("degenerate signal: clean image has zero variance")]
    DegenerateSignal,

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    Divergence { epoch: usize, what: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate clustering: {0}")]
    DegenerateCluster(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate class statistics: {0}")]
    DegenerateStatistics(String),

    #[error("{path}: parse error at byte {offset}: {msg}")]
    Parse {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("output directory {0} exists and is not empty (use --force)")]
    OutputExists(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HetemError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HetemError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        HetemError::Parse {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }
}
