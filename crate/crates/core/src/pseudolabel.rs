//! Pseudo ground truth for base classes, mined from base-detector detections on
//! scenes that only carry novel-class annotations.

use serde::{Deserialize, Serialize};

use crate::geometry::iou;
use crate::model::{ClassPartition, Detection, GroundTruthObject};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningConfig {
    /// Minimum detection confidence for a detection to become a label.
    pub score_thresh: f64,
    /// Detections overlapping a novel ground-truth box with IoU strictly above
    /// this are dropped.
    pub removal_iou: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.7,
            removal_iou: 0.5,
        }
    }
}

impl MiningConfig {
    pub fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("score_thresh", self.score_thresh),
            ("removal_iou", self.removal_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

pub fn mine_pseudo_labels(
    base_dets: &[Detection],
    novel_gt: &[GroundTruthObject],
    cfg: &MiningConfig,
) -> Vec<GroundTruthObject> {
    base_dets
        .iter()
        .filter(|d| d.score >= cfg.score_thresh)
        .filter(|d| {
            novel_gt
                .iter()
                .all(|g| iou(&d.bbox, &g.bbox) <= cfg.removal_iou)
        })
        .map(|d| GroundTruthObject {
            bbox: d.bbox,
            class_id: d.class_id,
            is_pseudo: true,
        })
        .collect()
}

/// Per-class counts of pseudo labels, indexed by base class id.
pub fn pseudo_label_counts<'a>(
    labels: impl IntoIterator<Item = &'a GroundTruthObject>,
    partition: &ClassPartition,
) -> Vec<usize> {
    let mut counts = vec![0; partition.num_base()];
    for g in labels {
        if g.is_pseudo && partition.is_base(g.class_id) {
            counts[g.class_id] += 1;
        }
    }
    counts
}
