//! Review service for images that label selection could not decide.
//!
//! [`build_queue`] turns `decisions.jsonl` into pending items with
//! pre-rendered overlays; [`router`] exposes them over HTTP and records
//! reviewer decisions in an append-only log that is replayed on startup.

mod log;
mod queue;
mod server;

pub use log::{read_log, DecisionLog, LOG_FILE};
pub use queue::{
    build_queue, build_queue_from_manifest, label_overlay, proposal_overlay, Choice, ItemStatus,
    Media, OverlayUris, QueueItem, QueueStore, ReviewDecision,
};
pub use server::{router, serve, AppState, DecisionRequest, DEFAULT_PORT};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] labelqa::Error),
    #[error("{path}: {message}")]
    BadDecisions { path: std::path::PathBuf, message: String },
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
