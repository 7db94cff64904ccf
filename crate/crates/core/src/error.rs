use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("propagation distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("field has zero energy")]
    ZeroField,

    #[error("grid mismatch: expected {expected}x{expected}, got {actual}x{actual}")]
    GridMismatch { expected: usize, actual: usize },

    #[error("propagation method mismatch: forward used {forward}, backward used {backward}")]
    MethodMismatch {
        forward: &'static str,
        backward: &'static str,
    },

    #[error("all detector regions received zero energy")]
    AllZeroRegions,

    #[error("detector layout does not fit: {0}")]
    LayoutOverflow(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("truncated file {path}: {detail}")]
    TruncatedFile { path: PathBuf, detail: String },

    #[error("quantization needs at least 2 levels, got {0}")]
    BadLevels(usize),

    #[error("invalid calibration table: {0}")]
    TableInvalid(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
