//! Annotation quality assurance from few-shot regional proposals.
//!
//! Models trained on a handful of images per stack propose three candidate
//! masks per test image. Their agreement with two competing manual labels
//! decides which label to keep, or routes the image to a reviewer.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod paresn;
pub mod preprocess;
pub mod raster;
pub mod rcap;
pub mod tlsa;

pub use baseline::{fit_baseline, predict_baseline, BaselineModel, RegionalProposals};
pub use dataset::{ImageRecord, LabelKind, StackSplit};
pub use error::{Error, Result};
pub use metrics::{confusion, iou, overlap_report, Confusion, OverlapReport};
pub use paresn::{fit_paresn, init_paresn, predict_paresn, EsnHyperParams, ParEsnModel};
pub use preprocess::{preprocess, PreprocessedPlanes};
pub use raster::{BinaryMask, GrayImage};
pub use rcap::{rcap, RcapConfig};
pub use tlsa::{tlsa, Branch, Tau, TlsaConfig, TlsaDecision};
