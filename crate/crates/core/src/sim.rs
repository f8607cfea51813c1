//! Synthetic scenes with two simulated detectors.
//!
//! Every class has a prototype feature vector in each detector's feature
//! space. An object produces a proposal in the detector that owns its class,
//! carrying a jittered box, prototype-plus-noise features and logits peaked on
//! the class. For a confusable (base, novel) pair the two classes share half
//! of their prototype components, and the detector that does NOT own the
//! object's class also emits a medium-confidence proposal for the partner
//! class on the same object. Background proposals sit away from all objects
//! and carry flat class logits with a dominant background slot.
//!
//! Logits always include a trailing background slot. A detector's detections
//! are its proposals whose best class probability reaches
//! [`DETECTION_SCORE_THRESH`], followed by per-class NMS.
//!
//! Scene `i` draws from its own ChaCha stream, so output does not depend on
//! how scenes are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::softmax;
use crate::geometry::BBox;
use crate::merge::per_class_nms;
use crate::model::{
    AttributedDetection, ClassPartition, Dataset, DatasetHeader, Detection, DetectorLayout,
    DetectorOutput, GroundTruthObject, Proposal, SceneRecord, Source,
};

pub const CANVAS_WIDTH: u32 = 1024;
pub const CANVAS_HEIGHT: u32 = 512;
pub const DETECTION_SCORE_THRESH: f64 = 0.5;
pub const DETECTOR_NMS_IOU: f64 = 0.5;
/// Maximum number of background proposals per detector per scene.
pub const BACKGROUND_SLOTS: usize = 4;

const MIN_OBJECT_SIDE: f64 = 32.0;
const MAX_OBJECT_WIDTH: f64 = 200.0;
const MAX_OBJECT_HEIGHT: f64 = 160.0;
const PLACEMENT_MARGIN: f64 = 24.0;
const PLACEMENT_ATTEMPTS: usize = 64;
const OWNER_CONFIDENCE: (f64, f64) = (0.80, 0.98);
const CONFUSION_CONFIDENCE: (f64, f64) = (0.55, 0.75);
const BACKGROUND_LOGIT: f64 = 3.0;
const PROTOTYPE_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, PartialEq)]
#[error("invalid simulator config: {0}")]
pub struct SimError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_base: usize,
    pub n_novel: usize,
    pub base_feature_dim: usize,
    pub novel_feature_dim: usize,
    pub scenes: usize,
    /// Inclusive `[min, max]` object count per scene.
    pub objects_per_scene: [usize; 2],
    /// Standard deviation, in pixels, of proposal box jitter. Predicted boxes
    /// use half of it.
    pub box_jitter: f64,
    pub feature_noise: f64,
    /// `(base class id, novel class id)` pairs, both as global ids.
    pub confusable_pairs: Vec<(usize, usize)>,
    pub detector_miss_rate: f64,
    pub background_proposal_rate: f64,
    pub seed: u64,
    /// Index of the first generated scene. Scene `i` depends only on the seed
    /// and its index, so disjoint index ranges under one seed give disjoint
    /// splits that share class prototypes.
    pub first_scene: usize,
    pub image_prefix: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_base: 10,
            n_novel: 4,
            base_feature_dim: 32,
            novel_feature_dim: 24,
            scenes: 200,
            objects_per_scene: [2, 6],
            box_jitter: 3.0,
            feature_noise: 0.3,
            confusable_pairs: vec![(0, 10), (1, 11), (2, 12), (3, 13)],
            detector_miss_rate: 0.0,
            background_proposal_rate: 0.25,
            seed: 0,
            first_scene: 0,
            image_prefix: "scene-".into(),
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError(m));
        if self.n_base == 0 || self.n_novel == 0 {
            return err("n_base and n_novel must be positive".into());
        }
        if self.base_feature_dim == 0 || self.novel_feature_dim == 0 {
            return err("feature dims must be positive".into());
        }
        if self.scenes == 0 {
            return err("scenes must be positive".into());
        }
        if self.objects_per_scene[0] > self.objects_per_scene[1] {
            return err(format!(
                "objects_per_scene {:?} is not a range",
                self.objects_per_scene
            ));
        }
        for (name, v) in [
            ("detector_miss_rate", self.detector_miss_rate),
            ("background_proposal_rate", self.background_proposal_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("box_jitter", self.box_jitter),
            ("feature_noise", self.feature_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        let total = self.n_base + self.n_novel;
        let mut used = vec![false; total];
        for &(b, n) in &self.confusable_pairs {
            if b >= self.n_base || n < self.n_base || n >= total {
                return err(format!(
                    "confusable pair ({b}, {n}) must be (base id, novel id)"
                ));
            }
            if used[b] || used[n] {
                return err(format!("class in pair ({b}, {n}) already paired"));
            }
            used[b] = true;
            used[n] = true;
        }
        Ok(())
    }

    pub fn partition(&self) -> ClassPartition {
        ClassPartition::new(
            (0..self.n_base).map(|k| format!("base_{k}")).collect(),
            (0..self.n_novel).map(|k| format!("novel_{k}")).collect(),
        )
        .expect("generated names are unique and non-empty")
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            partition: self.partition(),
            base: DetectorLayout {
                feature_dim: self.base_feature_dim,
                logits_len: self.n_base + 1,
            },
            novel: DetectorLayout {
                feature_dim: self.novel_feature_dim,
                logits_len: self.n_novel + 1,
            },
        }
    }

    /// Partner class of `class_id` in a confusable pair.
    pub fn partner(&self, class_id: usize) -> Option<usize> {
        self.confusable_pairs.iter().find_map(|&(b, n)| {
            if b == class_id {
                Some(n)
            } else if n == class_id {
                Some(b)
            } else {
                None
            }
        })
    }

    pub fn is_confusable(&self, class_id: usize) -> bool {
        self.partner(class_id).is_some()
    }
}

/// Per-detector class prototypes, indexed by global class id, plus a
/// background prototype at index `|B| + |N|`.
struct Prototypes {
    base: Vec<Vec<f64>>,
    novel: Vec<Vec<f64>>,
}

impl Prototypes {
    fn new(cfg: &SimConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(PROTOTYPE_STREAM);
        let total = cfg.n_base + cfg.n_novel;
        let mut space = |dim: usize| {
            let normal = Normal::new(0.0, 1.0).unwrap();
            let mut protos: Vec<Vec<f64>> = (0..total)
                .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
                .collect();
            for &(b, n) in &cfg.confusable_pairs {
                let shared = protos[b][..dim / 2].to_vec();
                protos[n][..dim / 2].copy_from_slice(&shared);
            }
            protos.push(vec![0.0; dim]);
            protos
        };
        let base = space(cfg.base_feature_dim);
        let novel = space(cfg.novel_feature_dim);
        Self { base, novel }
    }

    fn get(&self, source: Source, id: usize) -> &[f64] {
        match source {
            Source::Base => &self.base[id],
            Source::Novel => &self.novel[id],
        }
    }
}

fn expand(b: &BBox, m: f64) -> BBox {
    BBox::new_unchecked(b.x1 - m, b.y1 - m, b.x2 + m, b.y2 + m)
}

fn place(rng: &mut impl Rng, occupied: &[BBox], w: f64, h: f64) -> Option<BBox> {
    let (cw, ch) = (f64::from(CANVAS_WIDTH), f64::from(CANVAS_HEIGHT));
    for _ in 0..PLACEMENT_ATTEMPTS {
        let x = rng.random_range(0.0..cw - w);
        let y = rng.random_range(0.0..ch - h);
        let cand = BBox::new_unchecked(x, y, x + w, y + h);
        let grown = expand(&cand, PLACEMENT_MARGIN);
        if occupied.iter().all(|o| grown.intersection_area(o) == 0.0) {
            return Some(cand);
        }
    }
    None
}

fn jitter(rng: &mut impl Rng, b: &BBox, std: f64) -> BBox {
    if std == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, std).unwrap();
    let (cx, cy) = b.center();
    let cx = cx + n.sample(rng);
    let cy = cy + n.sample(rng);
    let w = (b.width() + n.sample(rng)).max(4.0);
    let h = (b.height() + n.sample(rng)).max(4.0);
    BBox::new_unchecked(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

/// Logits over `k` classes plus background whose softmax puts probability
/// `p` on class `local`, the rest spread evenly.
fn peaked_logits(k: usize, local: usize, p: f64) -> Vec<f64> {
    let mut l = vec![0.0; k + 1];
    l[local] = (p * k as f64 / (1.0 - p)).ln();
    l
}

fn noisy(rng: &mut impl Rng, proto: &[f64], std: f64) -> Vec<f64> {
    if std == 0.0 {
        return proto.to_vec();
    }
    let n = Normal::new(0.0, std).unwrap();
    proto.iter().map(|v| v + n.sample(rng)).collect()
}

/// Best class (as a global id) and its probability, ignoring the trailing
/// background slot.
pub fn decode_logits(logits: &[f64], classes: std::ops::Range<usize>) -> (usize, f64) {
    let probs = softmax(logits);
    let (local, p) = probs[..classes.len()]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("at least one class");
    (classes.start + local, *p)
}

fn detections_for(
    proposals: &[Proposal],
    partition: &ClassPartition,
    source: Source,
) -> Vec<AttributedDetection> {
    let mut cands = Vec::new();
    let mut idx = Vec::new();
    for (i, p) in proposals.iter().enumerate() {
        let (class_id, score) = decode_logits(&p.logits, partition.ids_of(source));
        if score >= DETECTION_SCORE_THRESH {
            cands.push(Detection {
                bbox: p.predicted_box,
                class_id,
                score,
                provenance: source.provenance(),
            });
            idx.push(i);
        }
    }
    per_class_nms(&cands, DETECTOR_NMS_IOU)
        .into_iter()
        .map(|k| {
            let d = &cands[k];
            AttributedDetection {
                bbox: d.bbox,
                class_id: d.class_id,
                score: d.score,
                provenance: d.provenance,
                proposal_index: idx[k],
            }
        })
        .collect()
}

fn generate_scene(
    cfg: &SimConfig,
    protos: &Prototypes,
    partition: &ClassPartition,
    index: usize,
) -> SceneRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let total = partition.num_classes();

    let n_obj = rng.random_range(cfg.objects_per_scene[0]..=cfg.objects_per_scene[1]);
    let mut occupied: Vec<BBox> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..n_obj {
        let w = rng.random_range(MIN_OBJECT_SIDE..MAX_OBJECT_WIDTH);
        let h = rng.random_range(MIN_OBJECT_SIDE..MAX_OBJECT_HEIGHT);
        let class_id = rng.random_range(0..total);
        if let Some(b) = place(&mut rng, &occupied, w, h) {
            occupied.push(b);
            objects.push(GroundTruthObject {
                bbox: b,
                class_id,
                is_pseudo: false,
            });
        }
    }

    let mut outputs = [
        DetectorOutput::empty(Source::Base),
        DetectorOutput::empty(Source::Novel),
    ];
    let mut emit = |rng: &mut ChaCha8Rng,
                    source: Source,
                    gt: &BBox,
                    seen_as: usize,
                    label: usize,
                    conf: (f64, f64)| {
        let ids = partition.ids_of(source);
        let p = rng.random_range(conf.0..conf.1);
        let proposal = Proposal {
            bbox: jitter(rng, gt, cfg.box_jitter),
            objectness: p,
            feature: noisy(rng, protos.get(source, seen_as), cfg.feature_noise),
            logits: peaked_logits(ids.len(), label - ids.start, p),
            predicted_box: jitter(rng, gt, 0.5 * cfg.box_jitter),
            source,
        };
        outputs[source as usize].proposals.push(proposal);
    };
    for obj in &objects {
        let owner = partition
            .owner(obj.class_id)
            .expect("object class in range");
        if rng.random::<f64>() >= cfg.detector_miss_rate {
            emit(
                &mut rng,
                owner,
                &obj.bbox,
                obj.class_id,
                obj.class_id,
                OWNER_CONFIDENCE,
            );
        }
        if let Some(partner) = cfg.partner(obj.class_id) {
            if rng.random::<f64>() >= cfg.detector_miss_rate {
                emit(
                    &mut rng,
                    owner.other(),
                    &obj.bbox,
                    obj.class_id,
                    partner,
                    CONFUSION_CONFIDENCE,
                );
            }
        }
    }

    for source in [Source::Base, Source::Novel] {
        let k = partition.ids_of(source).len();
        for _ in 0..BACKGROUND_SLOTS {
            if rng.random::<f64>() >= cfg.background_proposal_rate {
                continue;
            }
            let w = rng.random_range(MIN_OBJECT_SIDE..MAX_OBJECT_WIDTH);
            let h = rng.random_range(MIN_OBJECT_SIDE..MAX_OBJECT_HEIGHT);
            let Some(b) = place(&mut rng, &occupied, w, h) else {
                continue;
            };
            occupied.push(b);
            let mut logits = vec![0.0; k + 1];
            logits[k] = BACKGROUND_LOGIT;
            outputs[source as usize].proposals.push(Proposal {
                bbox: b,
                objectness: rng.random_range(0.02..0.2),
                feature: noisy(&mut rng, protos.get(source, total), cfg.feature_noise),
                logits,
                predicted_box: b,
                source,
            });
        }
    }

    let [mut base_output, mut novel_output] = outputs;
    base_output.detections = detections_for(&base_output.proposals, partition, Source::Base);
    novel_output.detections = detections_for(&novel_output.proposals, partition, Source::Novel);
    SceneRecord {
        image_id: format!("{}{index:05}", cfg.image_prefix),
        width: CANVAS_WIDTH,
        height: CANVAS_HEIGHT,
        ground_truth: objects,
        base_output,
        novel_output,
    }
}

pub fn generate(cfg: &SimConfig) -> Result<Dataset, SimError> {
    cfg.check()?;
    let header = cfg.header();
    let protos = Prototypes::new(cfg);
    let scenes = (cfg.first_scene..cfg.first_scene + cfg.scenes)
        .into_par_iter()
        .map(|i| generate_scene(cfg, &protos, &header.partition, i))
        .collect();
    Ok(Dataset { header, scenes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segregation::segregate;

    fn small() -> SimConfig {
        SimConfig {
            scenes: 30,
            ..SimConfig::default()
        }
    }

    #[test]
    fn generated_scenes_validate() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.scenes.len(), 30);
        assert!(d.validate().is_empty(), "{:?}", d.validate());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SimConfig { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn disjoint_detectors_never_overlap() {
        let cfg = SimConfig {
            confusable_pairs: vec![],
            box_jitter: 0.0,
            detector_miss_rate: 0.0,
            background_proposal_rate: 1.0,
            ..small()
        };
        for s in generate(&cfg).unwrap().scenes {
            let r = segregate(&s.base_output.proposals, &s.novel_output.proposals, 0.5);
            assert!(r.overlapping.is_empty());
        }
    }

    #[test]
    fn empty_scenes_have_only_background() {
        let cfg = SimConfig {
            objects_per_scene: [0, 0],
            background_proposal_rate: 1.0,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        assert!(d.validate().is_empty());
        for s in &d.scenes {
            assert!(s.ground_truth.is_empty());
            assert!(s.base_output.detections.is_empty());
            assert!(s.novel_output.detections.is_empty());
        }
        assert!(d.scenes.iter().any(|s| !s.base_output.proposals.is_empty()));
    }

    #[test]
    fn config_errors() {
        let bad_pair = SimConfig {
            confusable_pairs: vec![(0, 3)],
            ..small()
        };
        assert!(generate(&bad_pair).is_err());
        let bad_rate = SimConfig {
            detector_miss_rate: 1.5,
            ..small()
        };
        assert!(generate(&bad_rate).is_err());
        let reused = SimConfig {
            confusable_pairs: vec![(0, 10), (0, 11)],
            ..small()
        };
        assert!(generate(&reused).is_err());
    }

    #[test]
    fn peaked_logits_hit_target_probability() {
        let l = peaked_logits(4, 2, 0.9);
        let (c, p) = decode_logits(&l, 10..14);
        assert_eq!(c, 12);
        assert!((p - 0.9).abs() < 1e-12);
    }
}
