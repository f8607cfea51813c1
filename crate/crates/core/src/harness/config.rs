use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::fusion::TrainConfig;
use crate::pseudolabel::MiningConfig;

/// Every tunable of the end-to-end pipeline. Loadable from TOML; any field may
/// be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// IoA threshold for proposal segregation. 0.8 matches the setting used for
    /// the larger 80-class benchmark.
    pub tau: f64,
    /// Cross-detector merge IoU threshold.
    pub cross_iou: f64,
    /// Minimum base-detector confidence for a pseudo label.
    pub score_thresh: f64,
    /// Pseudo labels overlapping novel ground truth above this IoU are dropped.
    pub removal_iou: f64,
    /// IoU needed to assign a ground-truth class to an overlapping region.
    pub match_iou: f64,
    /// Minimum fusion-head class probability for a fusion detection.
    pub fusion_score_thresh: f64,
    /// Per-class NMS threshold applied to the fusion head's own detections.
    pub fusion_nms_iou: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub box_weight: f64,
    pub d_h: usize,
    pub d_t: usize,
    pub seed: u64,
    /// Annotated instances per novel class. Recorded, not used in computation.
    pub shots: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let mining = MiningConfig::default();
        Self {
            tau: 0.5,
            cross_iou: 0.5,
            score_thresh: mining.score_thresh,
            removal_iou: mining.removal_iou,
            match_iou: 0.5,
            fusion_score_thresh: 0.5,
            fusion_nms_iou: 0.5,
            epochs: train.epochs,
            lr: train.lr,
            batch_size: train.batch_size,
            momentum: train.momentum,
            box_weight: train.box_weight,
            d_h: 128,
            d_t: 256,
            seed: 0,
            shots: 10,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        for (name, v) in [
            ("tau", self.tau),
            ("cross_iou", self.cross_iou),
            ("score_thresh", self.score_thresh),
            ("removal_iou", self.removal_iou),
            ("match_iou", self.match_iou),
            ("fusion_score_thresh", self.fusion_score_thresh),
            ("fusion_nms_iou", self.fusion_nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(HarnessError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.d_h == 0 || self.d_t == 0 {
            return Err(HarnessError::Config("d_h and d_t must be positive".into()));
        }
        self.train().check().map_err(HarnessError::Config)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed: self.seed,
            box_weight: self.box_weight,
        }
    }

    pub fn mining(&self) -> MiningConfig {
        MiningConfig {
            score_thresh: self.score_thresh,
            removal_iou: self.removal_iou,
        }
    }
}
