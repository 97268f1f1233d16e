use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text input failed to parse. `line` is 1-based; for CSV data it is the
    /// data row number (header excluded).
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported geometry type `{0}`")]
    UnsupportedGeometry(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("raster `{raster}` does not overlap grid `{grid}`")]
    NoOverlap { raster: String, grid: String },

    #[error("no road present on grid `{0}`")]
    NoRoad(String),

    #[error("solver did not converge after {iterations} iterations (last objective {last:?})")]
    NotConverged {
        iterations: usize,
        trace: Vec<f64>,
        last: Option<f64>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}
