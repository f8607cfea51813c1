//! Building fusion inputs from scene records, training-set construction and
//! decoding of fusion predictions into detections.

use super::loss::{softmax, FusionTarget};
use super::net::{forward, FusionInput, FusionNetParams};
use super::FusionError;
use crate::geometry::{iou, BBox};
use crate::model::{
    validate_scene, DatasetHeader, Detection, Proposal, Provenance, SceneRecord, Source,
};
use crate::segregation::{segregate, SegregationResult};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// Upper bound on predicted log size ratios, so that `exp` stays finite.
const MAX_LOG_RATIO: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Regression target taking `from` onto `to`:
/// `(Δcx / w, Δcy / h, ln(w' / w), ln(h' / h))`.
pub fn encode_delta(from: &BBox, to: &BBox) -> [f64; 4] {
    let (cx, cy) = from.center();
    let (tx, ty) = to.center();
    [
        (tx - cx) / from.width(),
        (ty - cy) / from.height(),
        (to.width() / from.width()).ln(),
        (to.height() / from.height()).ln(),
    ]
}

/// Inverse of [`encode_delta`]. Size ratios are clamped to
/// `[-ln(1000/16), ln(1000/16)]` in log space.
pub fn decode_delta(from: &BBox, delta: &[f64; 4]) -> BBox {
    let (cx, cy) = from.center();
    let w = from.width() * delta[2].clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    let h = from.height() * delta[3].clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    let nx = cx + delta[0] * from.width();
    let ny = cy + delta[1] * from.height();
    BBox::new_unchecked(nx - 0.5 * w, ny - 0.5 * h, nx + 0.5 * w, ny + 0.5 * h)
}

/// Feature, logits and the predicted box normalized by the image size.
pub fn branch_vector(p: &Proposal, width: u32, height: u32) -> Vec<f64> {
    let (w, h) = (f64::from(width), f64::from(height));
    let b = &p.predicted_box;
    let mut v = Vec::with_capacity(p.feature.len() + p.logits.len() + 4);
    v.extend_from_slice(&p.feature);
    v.extend_from_slice(&p.logits);
    v.extend_from_slice(&[b.x1 / w, b.y1 / h, b.x2 / w, b.y2 / h]);
    v
}

/// Index of the proposal in `others` with the highest IoU against `target`,
/// lowest index on ties.
fn best_partner(target: &BBox, others: &[Proposal]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in others.iter().enumerate() {
        let v = iou(target, &p.bbox);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// One fusion input per overlapping proposal, in `seg.overlapping` order.
///
/// The proposal supplies its own detector's branch. The other branch comes
/// from the other detector's proposal with the highest IoU against it.
pub fn fusion_inputs(
    scene: &SceneRecord,
    seg: &SegregationResult,
) -> Vec<(Source, usize, FusionInput)> {
    let mut out = Vec::with_capacity(seg.overlapping.len());
    for &(source, idx) in &seg.overlapping {
        let own = &scene.output(source).proposals[idx];
        let others = &scene.output(source.other()).proposals;
        let Some(j) = best_partner(&own.bbox, others) else {
            continue;
        };
        let partner = &others[j];
        let (base, novel) = match source {
            Source::Base => (own, partner),
            Source::Novel => (partner, own),
        };
        out.push((
            source,
            idx,
            FusionInput {
                base_branch: branch_vector(base, scene.width, scene.height),
                novel_branch: branch_vector(novel, scene.width, scene.height),
                proposal_box: own.bbox,
            },
        ));
    }
    out
}

/// Target for a region: the class of the ground-truth box with the highest IoU
/// (lowest index on ties) when that IoU reaches `match_iou`, else background.
pub fn assign_target(
    region: &BBox,
    scene: &SceneRecord,
    background_id: usize,
    match_iou: f64,
) -> FusionTarget {
    let mut best: Option<(usize, f64)> = None;
    for (k, g) in scene.ground_truth.iter().enumerate() {
        let v = iou(region, &g.bbox);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    match best {
        Some((k, v)) if v >= match_iou => {
            let g = &scene.ground_truth[k];
            FusionTarget {
                class_id: g.class_id,
                box_delta: Some(encode_delta(region, &g.bbox)),
            }
        }
        _ => FusionTarget::background(background_id),
    }
}

/// Segregates every scene and labels each overlapping proposal against the
/// scene's ground truth (pseudo labels included).
pub fn build_training_set(
    scenes: &[SceneRecord],
    header: &DatasetHeader,
    tau: f64,
    match_iou: f64,
) -> Result<Vec<(FusionInput, FusionTarget)>, FusionError> {
    let bg = header.partition.background_id();
    let mut out = Vec::new();
    for scene in scenes {
        let violations = validate_scene(scene, header);
        if !violations.is_empty() {
            return Err(FusionError::InvalidScene {
                image_id: scene.image_id.clone(),
                violations: violations.iter().map(|v| v.to_string()).collect(),
            });
        }
        let seg = segregate(
            &scene.base_output.proposals,
            &scene.novel_output.proposals,
            tau,
        );
        for (_, _, input) in fusion_inputs(scene, &seg) {
            let target = assign_target(&input.proposal_box, scene, bg, match_iou);
            out.push((input, target));
        }
    }
    Ok(out)
}

/// Decodes fusion outputs into detections. An input yields a detection when
/// its most probable class is not background and that probability reaches
/// `score_thresh`.
pub fn predict(
    params: &FusionNetParams,
    inputs: &[FusionInput],
    score_thresh: f64,
) -> Result<Vec<Detection>, FusionError> {
    let bg = params.shape.background_id();
    let mut out = Vec::new();
    for input in inputs {
        let o = forward(params, input)?;
        let probs = softmax(&o.class_scores);
        let (class_id, &p) = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("class head has at least one output");
        if class_id == bg || p < score_thresh {
            continue;
        }
        let bbox = decode_delta(&input.proposal_box, &o.box_delta);
        if !bbox.is_valid() {
            continue;
        }
        out.push(Detection {
            bbox,
            class_id,
            score: p,
            provenance: Provenance::Fusion,
        });
    }
    Ok(out)
}
