use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: shapes, unknown classes, undersized images and the like.
    #[error("{0}")]
    Structural(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// A loss or statistic became NaN/inf during optimization.
    #[error("numeric failure at epoch {epoch}: term `{term}` is {value}")]
    Numeric { epoch: usize, term: String, value: f64 },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("unsupported schema version {found} (expected {expected}); migrate the file first")]
    Version { found: u32, expected: u32 },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error on {}: {msg}", path.display())]
    Png { path: PathBuf, msg: String },
}

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Version { .. } => 2,
            Error::Numeric { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
