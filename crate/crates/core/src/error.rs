use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("degenerate channel {channel}: min == max == {value}")]
    DegenerateChannel { channel: usize, value: f64 },
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },
    #[error("attack failed at PGD iteration {iteration}: {message}")]
    Attack { iteration: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("array file error: {0}")]
    Npy(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Schema(_) | Error::Parse { .. } | Error::Config(_) | Error::Contract(_)
        )
    }
}
