//! Cross-detector duplicate suppression over the base, novel and fusion
//! detection sets.

use std::cmp::Ordering;

use crate::geometry::iou;
use crate::model::Detection;

pub const DEFAULT_CROSS_IOU: f64 = 0.5;

/// Visiting order: score descending, then provenance (base, novel, fusion),
/// then box coordinates and class so that fully identical detections are the
/// only remaining ties.
fn visit_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.provenance.cmp(&b.provenance))
        .then_with(|| {
            a.bbox
                .to_array()
                .iter()
                .zip(b.bbox.to_array().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy region-based suppression across detectors.
///
/// A detection is kept unless an already-kept detection of a different
/// provenance overlaps it with IoU strictly above `cross_iou`. Class labels
/// are ignored and same-provenance pairs are never suppressed. The result is
/// sorted by score descending.
pub fn merge_detections(dets: &[Detection], cross_iou: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort keeps input index as the last tie-break.
    order.sort_by(|&i, &j| visit_order(&dets[i], &dets[j]));

    let mut kept: Vec<&Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.provenance != d.provenance && iou(&k.bbox, &d.bbox) > cross_iou);
        if !suppressed {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Standard per-class NMS within a single detector's output. Returns the
/// indices of kept detections in visiting order (score descending, then index).
pub fn per_class_nms(dets: &[Detection], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &dets[i];
        if !kept
            .iter()
            .any(|&k| dets[k].class_id == d.class_id && iou(&dets[k].bbox, &d.bbox) > iou_thresh)
        {
            kept.push(i);
        }
    }
    kept
}

/// Number of pairs of different provenance whose IoU exceeds `thresh`.
pub fn cross_provenance_duplicates(dets: &[Detection], thresh: f64) -> usize {
    let mut n = 0;
    for (i, a) in dets.iter().enumerate() {
        for b in &dets[i + 1..] {
            if a.provenance != b.provenance && iou(&a.bbox, &b.bbox) > thresh {
                n += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;

    fn det(b: [f64; 4], class_id: usize, score: f64, provenance: Provenance) -> Detection {
        Detection {
            bbox: b.into(),
            class_id,
            score,
            provenance,
        }
    }

    #[test]
    fn disjoint_all_kept() {
        let dets = vec![
            det([0., 0., 10., 10.], 0, 0.5, Provenance::Base),
            det([20., 0., 30., 10.], 3, 0.9, Provenance::Novel),
            det([40., 0., 50., 10.], 1, 0.7, Provenance::Fusion),
        ];
        let out = merge_detections(&dets, 0.5);
        let scores: Vec<f64> = out.iter().map(|d| d.score).collect();
        assert_eq!(scores, [0.9, 0.7, 0.5]);
    }

    #[test]
    fn higher_score_wins_across_detectors() {
        // IoU([0,0,10,10], [0,0,10,16]) = 100/160 = 0.625.
        let dets = vec![
            det([0., 0., 10., 16.], 3, 0.7, Provenance::Novel),
            det([0., 0., 10., 10.], 0, 0.9, Provenance::Base),
        ];
        let out = merge_detections(&dets, 0.5);
        assert_eq!(out, vec![dets[1].clone()]);
    }

    #[test]
    fn same_provenance_exempt() {
        let dets = vec![
            det([0., 0., 10., 10.], 0, 0.9, Provenance::Base),
            det([0., 0., 10., 9.], 1, 0.8, Provenance::Base),
        ];
        assert_eq!(merge_detections(&dets, 0.5).len(), 2);
    }

    #[test]
    fn ties_prefer_base_then_novel() {
        let dets = vec![
            det([0., 0., 10., 10.], 4, 0.8, Provenance::Fusion),
            det([0., 0., 10., 10.], 3, 0.8, Provenance::Novel),
            det([0., 0., 10., 10.], 0, 0.8, Provenance::Base),
        ];
        let out = merge_detections(&dets, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].provenance, Provenance::Base);
    }

    #[test]
    fn iou_equal_to_threshold_is_kept() {
        // IoU([0,0,10,10], [0,0,10,20]) = 0.5 exactly: not "exceeding".
        let dets = vec![
            det([0., 0., 10., 10.], 0, 0.9, Provenance::Base),
            det([0., 0., 10., 20.], 3, 0.7, Provenance::Novel),
        ];
        assert_eq!(merge_detections(&dets, 0.5).len(), 2);
        assert_eq!(cross_provenance_duplicates(&dets, 0.5), 0);
    }

    #[test]
    fn nms_is_per_class() {
        let dets = vec![
            det([0., 0., 10., 10.], 0, 0.6, Provenance::Fusion),
            det([0., 0., 10., 9.], 0, 0.9, Provenance::Fusion),
            det([0., 0., 10., 10.], 1, 0.5, Provenance::Fusion),
        ];
        assert_eq!(per_class_nms(&dets, 0.5), [1, 2]);
    }

    #[test]
    fn suppressed_detection_cannot_suppress() {
        // novel is removed by base; fusion overlaps only novel so it survives.
        let dets = vec![
            det([0., 0., 10., 10.], 0, 0.9, Provenance::Base),
            det([3., 0., 13., 10.], 3, 0.8, Provenance::Novel),
            det([6., 0., 16., 10.], 2, 0.7, Provenance::Fusion),
        ];
        let out = merge_detections(&dets, 0.5);
        let prov: Vec<_> = out.iter().map(|d| d.provenance).collect();
        assert_eq!(prov, [Provenance::Base, Provenance::Fusion]);
    }
}
