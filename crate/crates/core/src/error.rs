use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing file for `{id}`: {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("not enough records: need at least {needed}, got {got}")]
    NotEnoughRecords { needed: usize, got: usize },

    #[error("target is blank on every training image; ROC is undefined")]
    BlankTarget,

    #[error("model is already finalized")]
    AlreadyFinalized,

    #[error("model has not been trained")]
    NotTrained,

    #[error("ridge solve failed: {0}")]
    SolveFailed(String),

    #[error("empty region of interest")]
    EmptyRoi,

    #[error("malformed model file: {0}")]
    BadModelFile(String),

    #[error("image codec error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
