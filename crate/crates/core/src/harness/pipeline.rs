//! End-to-end orchestration: pseudo-label mining, fusion training, per-scene
//! inference and evaluation.

use std::collections::HashSet;

use rayon::prelude::*;

use super::io::{detections_map, ImageDetections};
use super::{HarnessError, PipelineConfig};
use crate::eval::{evaluate, EvalReport};
use crate::fusion::{
    build_training_set, fusion_inputs, predict, train, EpochStats, FusionError, FusionNetParams,
    NetShape,
};
use crate::merge::{cross_provenance_duplicates, merge_detections, per_class_nms};
use crate::model::{Dataset, DatasetHeader, Detection, SceneRecord, Source};
use crate::pseudolabel::{mine_pseudo_labels, pseudo_label_counts, MiningConfig};
use crate::segregation::{segregate, SegregationResult};

/// Appends mined pseudo labels to every scene's ground truth. With
/// `novel_annotations_only`, non-pseudo base-class annotations are dropped
/// first, matching an incremental setting where base data is unavailable.
pub fn mine_dataset(
    dataset: &Dataset,
    cfg: &MiningConfig,
    novel_annotations_only: bool,
) -> Dataset {
    let partition = &dataset.header.partition;
    let scenes = dataset
        .scenes
        .par_iter()
        .map(|scene| {
            let mut s = scene.clone();
            if novel_annotations_only {
                s.ground_truth
                    .retain(|g| g.is_pseudo || partition.is_novel(g.class_id));
            }
            let novel_gt: Vec<_> = s
                .ground_truth
                .iter()
                .filter(|g| !g.is_pseudo && partition.is_novel(g.class_id))
                .cloned()
                .collect();
            let base_dets: Vec<Detection> = s
                .base_output
                .detections
                .iter()
                .map(|d| d.detection())
                .collect();
            s.ground_truth
                .extend(mine_pseudo_labels(&base_dets, &novel_gt, cfg));
            s
        })
        .collect();
    Dataset {
        header: dataset.header.clone(),
        scenes,
    }
}

pub fn net_shape(header: &DatasetHeader, cfg: &PipelineConfig) -> NetShape {
    NetShape {
        base_input_dim: header.base.branch_dim(),
        novel_input_dim: header.novel.branch_dim(),
        d_h: cfg.d_h,
        d_t: cfg.d_t,
        num_classes: header.partition.num_classes(),
    }
}

pub fn check_checkpoint(
    params: &FusionNetParams,
    header: &DatasetHeader,
) -> Result<(), HarnessError> {
    params
        .check()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let s = params.shape;
    let expected = (
        header.base.branch_dim(),
        header.novel.branch_dim(),
        header.partition.num_classes(),
    );
    if (s.base_input_dim, s.novel_input_dim, s.num_classes) != expected {
        return Err(HarnessError::Config(format!(
            "checkpoint expects (base_input_dim, novel_input_dim, num_classes) = {:?}, scenes declare {:?}",
            (s.base_input_dim, s.novel_input_dim, s.num_classes),
            expected
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainedFusion {
    pub params: FusionNetParams,
    pub trace: Vec<EpochStats>,
    pub examples: usize,
}

/// Builds the fusion training set from (already mined) scenes and trains the
/// head from a seeded initialization. When no scene has overlapping proposals
/// the initialization is returned untrained with an empty trace.
pub fn train_fusion(
    dataset: &Dataset,
    cfg: &PipelineConfig,
) -> Result<TrainedFusion, HarnessError> {
    let set = build_training_set(&dataset.scenes, &dataset.header, cfg.tau, cfg.match_iou)
        .map_err(|e| match e {
            FusionError::InvalidScene {
                image_id,
                violations,
            } => HarnessError::Stage {
                stage: "build_training_set",
                scene: image_id,
                message: violations.join("; "),
            },
            other => HarnessError::Fusion(other),
        })?;
    let init = FusionNetParams::init(net_shape(&dataset.header, cfg), cfg.seed);
    if set.is_empty() {
        return Ok(TrainedFusion {
            params: init,
            trace: Vec::new(),
            examples: 0,
        });
    }
    let out = train(&init, &set, &cfg.train()).map_err(HarnessError::Fusion)?;
    Ok(TrainedFusion {
        params: out.params,
        trace: out.trace,
        examples: set.len(),
    })
}

/// Intermediate products of inference on one scene.
#[derive(Debug, Clone)]
pub struct SceneInference {
    pub segregation: SegregationResult,
    pub base: Vec<Detection>,
    pub novel: Vec<Detection>,
    pub fusion: Vec<Detection>,
    pub merged: Vec<Detection>,
}

/// Detector detections whose source proposal is in that detector's valid bucket.
fn select_valid(scene: &SceneRecord, source: Source, seg: &SegregationResult) -> Vec<Detection> {
    let valid: HashSet<usize> = seg.valid(source).iter().copied().collect();
    scene
        .output(source)
        .detections
        .iter()
        .filter(|d| valid.contains(&d.proposal_index))
        .map(|d| d.detection())
        .collect()
}

pub fn infer_scene(
    scene: &SceneRecord,
    params: &FusionNetParams,
    cfg: &PipelineConfig,
) -> Result<SceneInference, FusionError> {
    let seg = segregate(
        &scene.base_output.proposals,
        &scene.novel_output.proposals,
        cfg.tau,
    );
    let base = select_valid(scene, Source::Base, &seg);
    let novel = select_valid(scene, Source::Novel, &seg);

    let inputs: Vec<_> = fusion_inputs(scene, &seg)
        .into_iter()
        .map(|(_, _, x)| x)
        .collect();
    let raw = predict(params, &inputs, cfg.fusion_score_thresh)?;
    let fusion: Vec<Detection> = per_class_nms(&raw, cfg.fusion_nms_iou)
        .into_iter()
        .map(|i| raw[i].clone())
        .collect();

    let all: Vec<Detection> = base.iter().chain(&novel).chain(&fusion).cloned().collect();
    let merged = merge_detections(&all, cfg.cross_iou);
    Ok(SceneInference {
        segregation: seg,
        base,
        novel,
        fusion,
        merged,
    })
}

pub fn infer_dataset(
    dataset: &Dataset,
    params: &FusionNetParams,
    cfg: &PipelineConfig,
) -> Result<Vec<ImageDetections>, HarnessError> {
    check_checkpoint(params, &dataset.header)?;
    dataset
        .scenes
        .par_iter()
        .map(|scene| {
            infer_scene(scene, params, cfg)
                .map(|r| ImageDetections {
                    image_id: scene.image_id.clone(),
                    detections: r.merged,
                })
                .map_err(|e| HarnessError::Stage {
                    stage: "infer",
                    scene: scene.image_id.clone(),
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Both detectors' own detections, unfiltered.
pub fn naive_union(scene: &SceneRecord) -> Vec<Detection> {
    scene
        .base_output
        .detections
        .iter()
        .chain(&scene.novel_output.detections)
        .map(|d| d.detection())
        .collect()
}

pub fn detector_only(scene: &SceneRecord, source: Source) -> Vec<Detection> {
    scene
        .output(source)
        .detections
        .iter()
        .map(|d| d.detection())
        .collect()
}

/// Applies `f` to every scene, keyed by image id.
pub fn per_scene(
    dataset: &Dataset,
    f: impl Fn(&SceneRecord) -> Vec<Detection>,
) -> Vec<ImageDetections> {
    dataset
        .scenes
        .iter()
        .map(|s| ImageDetections {
            image_id: s.image_id.clone(),
            detections: f(s),
        })
        .collect()
}

pub fn count_duplicates(dets: &[ImageDetections], thresh: f64) -> usize {
    dets.iter()
        .map(|d| cross_provenance_duplicates(&d.detections, thresh))
        .sum()
}

pub fn evaluate_detections(
    dataset: &Dataset,
    dets: &[ImageDetections],
) -> Result<EvalReport, HarnessError> {
    evaluate(
        &dataset.scenes,
        &detections_map(dets),
        &dataset.header.partition,
    )
    .map_err(HarnessError::Eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCount {
    /// Cross-provenance pairs above `cross_iou` in the union of both detectors.
    pub before_merge: usize,
    /// The same count over the final detections.
    pub after_merge: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub fusion: TrainedFusion,
    /// Pseudo labels mined per base class across the training scenes.
    pub pseudo_labels: Vec<usize>,
    pub detections: Vec<ImageDetections>,
    pub report: EvalReport,
    pub confusion: ConfusionCount,
}

/// Mine, build the fusion set, train, infer on the test scenes, merge and
/// evaluate. Training scenes keep only novel-class annotations before mining.
pub fn run_pipeline(
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome, HarnessError> {
    cfg.check()?;
    if train_set.header != test_set.header {
        return Err(HarnessError::Config(
            "training and test scenes declare different headers".into(),
        ));
    }
    let mined = mine_dataset(train_set, &cfg.mining(), true);
    let pseudo_labels = pseudo_label_counts(
        mined.scenes.iter().flat_map(|s| &s.ground_truth),
        &mined.header.partition,
    );
    let fusion = train_fusion(&mined, cfg)?;
    let detections = infer_dataset(test_set, &fusion.params, cfg)?;
    let report = evaluate_detections(test_set, &detections)?;
    let confusion = ConfusionCount {
        before_merge: count_duplicates(&per_scene(test_set, naive_union), cfg.cross_iou),
        after_merge: count_duplicates(&detections, cfg.cross_iou),
    };
    Ok(PipelineOutcome {
        fusion,
        pseudo_labels,
        detections,
        report,
        confusion,
    })
}
