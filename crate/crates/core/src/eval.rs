//! Per-class AP at IoU 0.5 with base / novel / all aggregates.
//!
//! AP uses all-point interpolation: the area under the precision-recall curve
//! after replacing each precision by the maximum precision at any equal or
//! higher recall. Pseudo ground truth never takes part in evaluation.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::iou;
use crate::model::{ClassPartition, Detection, GroundTruthObject, SceneRecord};

pub const DEFAULT_IOU_THRESH: f64 = 0.5;
pub const INTERPOLATION: &str = "all-point";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("detections reference unknown image_id {0:?}")]
    UnknownImage(String),
    #[error("detection in image {image_id:?} has class id {class_id} outside the partition")]
    InvalidClass { image_id: String, class_id: usize },
}

/// Greedy matching of one class's detections against that class's ground truth
/// in one image. Detections are visited by descending score (ties by input
/// index); each takes the still-unmatched box with the highest IoU when that
/// IoU reaches `iou_thresh`. Returns TP flags aligned with `dets`.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    iou_thresh: f64,
) -> Vec<bool> {
    let gts: Vec<&GroundTruthObject> = gts.iter().filter(|g| !g.is_pseudo).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = iou(&dets[i].bbox, &g.bbox);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            if v >= iou_thresh {
                taken[j] = true;
                flags[i] = true;
            }
        }
    }
    flags
}

/// All-point interpolated average precision from `(score, is_tp)` pairs.
///
/// Entries are ranked by descending score, equal scores keeping their given
/// order. Returns `None` when `n_gt == 0`.
pub fn ap50(ranked: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| ranked[b].0.total_cmp(&ranked[a].0));

    let mut precision = Vec::with_capacity(order.len());
    let mut is_tp = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        if ranked[i].1 {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        is_tp.push(ranked[i].1);
    }
    // Monotone envelope from the right.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / n_gt as f64;
    Some(
        precision
            .iter()
            .zip(&is_tp)
            .filter(|(_, &t)| t)
            .fold(0.0, |acc, (p, _)| acc + step * p),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class_id: usize,
    pub name: String,
    pub n_gt: usize,
    pub n_det: usize,
    pub tp: usize,
    pub fp: usize,
    /// `None` for classes without ground truth.
    pub ap50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub interpolation: String,
    pub iou_threshold: f64,
    pub per_class: Vec<ClassEval>,
    pub map50_base: Option<f64>,
    pub map50_novel: Option<f64>,
    pub map50_all: Option<f64>,
    /// Classes without ground truth, left out of every mean.
    pub excluded_classes: Vec<usize>,
    pub total_tp: usize,
    pub total_fp: usize,
}

impl EvalReport {
    pub fn ap(&self, class_id: usize) -> Option<f64> {
        self.per_class.get(class_id).and_then(|c| c.ap50)
    }

    /// One-line table in the usual layout: per-novel-class AP, then the three
    /// aggregates.
    pub fn table_row(&self, partition: &ClassPartition) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let mut head = Vec::new();
        let mut row = Vec::new();
        for id in partition.novel_ids() {
            head.push(self.per_class[id].name.clone());
            row.push(pct(self.per_class[id].ap50));
        }
        head.extend(["mAP50_novel", "mAP50_base", "mAP50_all"].map(String::from));
        row.extend([self.map50_novel, self.map50_base, self.map50_all].map(pct));
        let widths: Vec<usize> = head
            .iter()
            .zip(&row)
            .map(|(h, r)| h.len().max(r.len()))
            .collect();
        let fmt_line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!("{}\n{}", fmt_line(&head), fmt_line(&row))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "AP@IoU={} ({} interpolation)",
            self.iou_threshold, self.interpolation
        )?;
        writeln!(
            f,
            "{:<20} {:>6} {:>6} {:>6} {:>6} {:>7}",
            "class", "gt", "dets", "tp", "fp", "AP50"
        )?;
        for c in &self.per_class {
            let ap = c.ap50.map_or("excl".to_string(), |v| format!("{:.4}", v));
            writeln!(
                f,
                "{:<20} {:>6} {:>6} {:>6} {:>6} {:>7}",
                c.name, c.n_gt, c.n_det, c.tp, c.fp, ap
            )?;
        }
        let agg = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.4}", v));
        writeln!(f, "mAP50 base:  {}", agg(self.map50_base))?;
        writeln!(f, "mAP50 novel: {}", agg(self.map50_novel))?;
        write!(f, "mAP50 all:   {}", agg(self.map50_all))
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Evaluates final detections (keyed by image id) against the non-pseudo
/// ground truth of `scenes`. Images without an entry count as having no
/// detections.
pub fn evaluate(
    scenes: &[SceneRecord],
    final_dets: &HashMap<String, Vec<Detection>>,
    partition: &ClassPartition,
) -> Result<EvalReport, EvalError> {
    let index: HashMap<&str, usize> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.image_id.as_str(), i))
        .collect();
    for (image_id, dets) in final_dets {
        if !index.contains_key(image_id.as_str()) {
            return Err(EvalError::UnknownImage(image_id.clone()));
        }
        if let Some(d) = dets.iter().find(|d| d.class_id >= partition.num_classes()) {
            return Err(EvalError::InvalidClass {
                image_id: image_id.clone(),
                class_id: d.class_id,
            });
        }
    }

    let n = partition.num_classes();
    let mut ranked: Vec<Vec<(f64, bool)>> = vec![Vec::new(); n];
    let mut n_gt = vec![0usize; n];
    let empty = Vec::new();
    for scene in scenes {
        let dets = final_dets.get(&scene.image_id).unwrap_or(&empty);
        for class_id in 0..n {
            let gts: Vec<GroundTruthObject> = scene
                .ground_truth
                .iter()
                .filter(|g| g.class_id == class_id && !g.is_pseudo)
                .cloned()
                .collect();
            let class_dets: Vec<Detection> = dets
                .iter()
                .filter(|d| d.class_id == class_id)
                .cloned()
                .collect();
            n_gt[class_id] += gts.len();
            let flags = match_detections(&class_dets, &gts, DEFAULT_IOU_THRESH);
            ranked[class_id].extend(class_dets.iter().zip(flags).map(|(d, t)| (d.score, t)));
        }
    }

    let per_class: Vec<ClassEval> = (0..n)
        .map(|id| {
            let tp = ranked[id].iter().filter(|r| r.1).count();
            ClassEval {
                class_id: id,
                name: partition.name(id).unwrap_or_default().to_string(),
                n_gt: n_gt[id],
                n_det: ranked[id].len(),
                tp,
                fp: ranked[id].len() - tp,
                ap50: ap50(&ranked[id], n_gt[id]),
            }
        })
        .collect();

    let ap_of = |ids: std::ops::Range<usize>| mean(ids.map(|i| per_class[i].ap50));
    Ok(EvalReport {
        interpolation: INTERPOLATION.into(),
        iou_threshold: DEFAULT_IOU_THRESH,
        map50_base: ap_of(partition.base_ids()),
        map50_novel: ap_of(partition.novel_ids()),
        map50_all: ap_of(0..n),
        excluded_classes: per_class
            .iter()
            .filter(|c| c.n_gt == 0)
            .map(|c| c.class_id)
            .collect(),
        total_tp: per_class.iter().map(|c| c.tp).sum(),
        total_fp: per_class.iter().map(|c| c.fp).sum(),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;

    fn det(b: [f64; 4], score: f64) -> Detection {
        Detection {
            bbox: b.into(),
            class_id: 0,
            score,
            provenance: Provenance::Base,
        }
    }

    fn gt(b: [f64; 4]) -> GroundTruthObject {
        GroundTruthObject {
            bbox: b.into(),
            class_id: 0,
            is_pseudo: false,
        }
    }

    #[test]
    fn exact_hit() {
        let g = [gt([0., 0., 10., 10.])];
        assert_eq!(
            match_detections(&[det([0., 0., 10., 10.], 0.5)], &g, 0.5),
            [true]
        );
    }

    #[test]
    fn single_match_per_gt() {
        let g = [gt([0., 0., 10., 10.])];
        let d = [det([0., 0., 10., 9.], 0.6), det([0., 0., 10., 10.], 0.8)];
        assert_eq!(match_detections(&d, &g, 0.5), [false, true]);
    }

    #[test]
    fn just_below_threshold_is_fp() {
        // IoU([0,0,100,49], [0,0,100,100]) = 4900/10000 = 0.49.
        let g = [gt([0., 0., 100., 100.])];
        assert_eq!(
            match_detections(&[det([0., 0., 100., 49.], 0.9)], &g, 0.5),
            [false]
        );
    }

    #[test]
    fn pseudo_gt_ignored() {
        let mut g = gt([0., 0., 10., 10.]);
        g.is_pseudo = true;
        assert_eq!(
            match_detections(&[det([0., 0., 10., 10.], 0.9)], &[g], 0.5),
            [false]
        );
    }

    #[test]
    fn ap_examples() {
        assert_eq!(ap50(&[(0.9, true), (0.8, true)], 2), Some(1.0));
        assert_eq!(ap50(&[(0.9, false), (0.8, true)], 1), Some(0.5));
        assert_eq!(ap50(&[], 3), Some(0.0));
        assert_eq!(ap50(&[(0.9, true)], 0), None);
    }

    #[test]
    fn envelope_uses_later_precision() {
        // Ranked TP, FP, FP, TP, TP over 3 GT: precisions 1, 1/2, 1/3, 1/2, 3/5.
        // Envelope at TP ranks: 1, 3/5, 3/5 -> AP = (1 + 0.6 + 0.6) / 3.
        let r = [(5., true), (4., false), (3., false), (2., true), (1., true)];
        let ap = ap50(&r, 3).unwrap();
        assert!((ap - 2.2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_image() {
        let p = crate::model::fixtures::partition();
        let mut m = HashMap::new();
        m.insert("nope".to_string(), vec![]);
        assert_eq!(
            evaluate(&[], &m, &p),
            Err(EvalError::UnknownImage("nope".into()))
        );
    }

    #[test]
    fn empty_evaluation_excludes_all() {
        let p = crate::model::fixtures::partition();
        let r = evaluate(&[], &HashMap::new(), &p).unwrap();
        assert_eq!(r.excluded_classes, [0, 1, 2]);
        assert_eq!(r.map50_all, None);
    }
}
