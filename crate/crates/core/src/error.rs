use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("signal too short: {samples} samples, need at least {required}")]
    SignalTooShort { samples: usize, required: usize },

    #[error("flat-line signal: zero variance over {samples} samples")]
    FlatLine { samples: usize },

    #[error("insufficient beats: {found} R peaks, need at least {required}")]
    InsufficientBeats { found: usize, required: usize },

    #[error("missing demographic field `{0}` for the requested augmentation")]
    MissingDemographic(&'static str),

    #[error("missing {task} label for sample {index} of an active task")]
    MissingLabel { task: &'static str, index: usize },

    #[error("{}row {row}: {message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Row {
        path: Option<PathBuf>,
        row: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("LOSO leakage: {0}")]
    Leakage(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
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

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
