//! The fusion head that classifies regions where both detectors fire.
//!
//! Each detector's view of a region (feature, logits, predicted box) goes
//! through its own branch: a linear projection to `d_h` followed by two
//! affine+SeLU layers. The two branch outputs are concatenated and passed
//! through two affine+ReLU trunk layers of width `d_t`, topped by a linear
//! class head (`|B| + |N| + 1` logits, background last) and a linear
//! class-agnostic box head (4 regression deltas).

mod checkpoint;
mod dataset;
mod loss;
mod net;
mod train;

use thiserror::Error;

pub use checkpoint::{parse_checkpoint, write_checkpoint, CheckpointError};
pub use dataset::{
    assign_target, branch_vector, build_training_set, decode_delta, encode_delta, fusion_inputs,
    predict, DEFAULT_MATCH_IOU,
};
pub use loss::{gradients, loss, softmax, FusionTarget, LossBreakdown, DEFAULT_BOX_WEIGHT};
pub use net::{
    forward, selu, Branch, Dense, FusionInput, FusionNetParams, FusionOutput, NetShape,
    LAYER_NAMES, SELU_ALPHA, SELU_LAMBDA,
};
pub use train::{dataset_metrics, train, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    DimensionMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("scene {image_id:?} failed validation: {}", violations.join("; "))]
    InvalidScene {
        image_id: String,
        violations: Vec<String>,
    },
}
