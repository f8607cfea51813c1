//! Detector fusion for few-shot incremental object detection.
//!
//! A frozen base-class detector and a few-shot novel-class detector are run on
//! the same image. Their proposals are split by intersection-over-area into
//! regions only one detector claims and regions both claim; a small trained
//! fusion head classifies the contested regions from both detectors' features.
//! The three detection sets are then merged with cross-detector suppression.
//!
//! The crate works on serialized detector outputs (see [`harness::io`]) and
//! ships a simulator ([`sim`]) that produces such outputs for testing.

pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod merge;
pub mod model;
pub mod pseudolabel;
pub mod segregation;
pub mod sim;

pub use geometry::{ioa, iou, pairwise_ioa, BBox};
pub use model::{ClassPartition, Dataset, Detection, Provenance, SceneRecord, Source};
