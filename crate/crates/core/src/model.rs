//! Shared data model: class partition, proposals, detector outputs, ground truth
//! and per-image scene records.
//!
//! Global class ids put the base block first (`0..|B|`), then the novel block
//! (`|B|..|B|+|N|`). The background id is `|B|+|N|`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("invalid class partition: {0}")]
    InvalidPartition(String),
}

/// Which detector produced a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Base,
    Novel,
}

impl Source {
    pub fn other(self) -> Source {
        match self {
            Source::Base => Source::Novel,
            Source::Novel => Source::Base,
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            Source::Base => Provenance::Base,
            Source::Novel => Provenance::Novel,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Base => "base",
            Source::Novel => "novel",
        })
    }
}

/// Which arm produced a final detection. The derived ordering is the merge
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Base,
    Novel,
    Fusion,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Base => "base",
            Provenance::Novel => "novel",
            Provenance::Fusion => "fusion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPartition {
    base_classes: Vec<String>,
    novel_classes: Vec<String>,
}

impl ClassPartition {
    pub fn new(base_classes: Vec<String>, novel_classes: Vec<String>) -> Result<Self, ModelError> {
        let p = Self {
            base_classes,
            novel_classes,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.base_classes.is_empty() || self.novel_classes.is_empty() {
            return Err(ModelError::InvalidPartition(
                "base and novel class lists must both be non-empty".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in self.base_classes.iter().chain(&self.novel_classes) {
            if !seen.insert(name.as_str()) {
                return Err(ModelError::InvalidPartition(format!(
                    "class name {name:?} appears more than once"
                )));
            }
        }
        Ok(())
    }

    pub fn base_classes(&self) -> &[String] {
        &self.base_classes
    }

    pub fn novel_classes(&self) -> &[String] {
        &self.novel_classes
    }

    pub fn num_base(&self) -> usize {
        self.base_classes.len()
    }

    pub fn num_novel(&self) -> usize {
        self.novel_classes.len()
    }

    /// `|B| + |N|`, excluding background.
    pub fn num_classes(&self) -> usize {
        self.num_base() + self.num_novel()
    }

    pub fn background_id(&self) -> usize {
        self.num_classes()
    }

    pub fn is_base(&self, id: usize) -> bool {
        id < self.num_base()
    }

    pub fn is_novel(&self, id: usize) -> bool {
        id >= self.num_base() && id < self.num_classes()
    }

    pub fn base_ids(&self) -> std::ops::Range<usize> {
        0..self.num_base()
    }

    pub fn novel_ids(&self) -> std::ops::Range<usize> {
        self.num_base()..self.num_classes()
    }

    /// Global ids of the classes a detector knows.
    pub fn ids_of(&self, source: Source) -> std::ops::Range<usize> {
        match source {
            Source::Base => self.base_ids(),
            Source::Novel => self.novel_ids(),
        }
    }

    pub fn owner(&self, id: usize) -> Option<Source> {
        if self.is_base(id) {
            Some(Source::Base)
        } else if self.is_novel(id) {
            Some(Source::Novel)
        } else {
            None
        }
    }

    pub fn class_id_of(&self, name: &str) -> Result<usize, ModelError> {
        self.base_classes
            .iter()
            .chain(&self.novel_classes)
            .position(|n| n == name)
            .ok_or_else(|| ModelError::UnknownClass(name.to_string()))
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        if self.is_base(id) {
            Some(&self.base_classes[id])
        } else if self.is_novel(id) {
            Some(&self.novel_classes[id - self.num_base()])
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
    /// Penultimate-layer features of the source detector.
    pub feature: Vec<f64>,
    /// Scores in the source detector's own class space, optionally followed by
    /// a background slot.
    pub logits: Vec<f64>,
    pub predicted_box: BBox,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
    pub provenance: Provenance,
}

/// A detector's own final detection, linked to the proposal it was decoded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributedDetection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
    pub provenance: Provenance,
    pub proposal_index: usize,
}

impl AttributedDetection {
    pub fn detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            class_id: self.class_id,
            score: self.score,
            provenance: self.provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorOutput {
    pub source: Source,
    pub proposals: Vec<Proposal>,
    pub detections: Vec<AttributedDetection>,
}

impl DetectorOutput {
    pub fn empty(source: Source) -> Self {
        Self {
            source,
            proposals: Vec::new(),
            detections: Vec::new(),
        }
    }

    pub fn proposal_boxes(&self) -> Vec<BBox> {
        self.proposals.iter().map(|p| p.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    #[serde(default)]
    pub is_pseudo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub ground_truth: Vec<GroundTruthObject>,
    pub base_output: DetectorOutput,
    pub novel_output: DetectorOutput,
}

impl SceneRecord {
    pub fn output(&self, source: Source) -> &DetectorOutput {
        match source {
            Source::Base => &self.base_output,
            Source::Novel => &self.novel_output,
        }
    }
}

/// Per-detector record layout declared once per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorLayout {
    pub feature_dim: usize,
    /// Either the detector's class count, or one more when a trailing
    /// background logit is present.
    pub logits_len: usize,
}

impl DetectorLayout {
    /// Width of a fusion branch input: feature, logits and the 4 box coordinates.
    pub fn branch_dim(&self) -> usize {
        self.feature_dim + self.logits_len + 4
    }
}

/// Dataset-level declarations shared by every scene record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub partition: ClassPartition,
    pub base: DetectorLayout,
    pub novel: DetectorLayout,
}

impl DatasetHeader {
    pub fn layout(&self, source: Source) -> DetectorLayout {
        match source {
            Source::Base => self.base,
            Source::Novel => self.novel,
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        self.partition.check()?;
        for source in [Source::Base, Source::Novel] {
            let n = self.partition.ids_of(source).len();
            let layout = self.layout(source);
            if layout.logits_len != n && layout.logits_len != n + 1 {
                return Err(ModelError::InvalidPartition(format!(
                    "{source} logits_len {} must be {n} or {}",
                    layout.logits_len,
                    n + 1
                )));
            }
        }
        Ok(())
    }
}

/// A header plus its scene records: the in-memory form of a scenes file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub scenes: Vec<SceneRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Vec<Violation> {
        validate_dataset(&self.header, &self.scenes)
    }
}

/// One invariant violation found in a scene, with the offending field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.message, self.path)
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn bbox(&mut self, path: String, b: &BBox) {
        if b.to_array().iter().any(|v| !v.is_finite()) {
            self.push(path, "non-finite box");
        } else if b.x2 <= b.x1 || b.y2 <= b.y1 {
            self.push(path, "zero-area box");
        }
    }

    fn unit(&mut self, path: String, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.push(path, format!("value {v} outside [0, 1]"));
        }
    }

    fn vector(&mut self, path: String, v: &[f64], expected: usize, what: &str) {
        if v.len() != expected {
            self.push(
                path,
                format!("{what} dimension {} != declared {expected}", v.len()),
            );
        } else if v.iter().any(|x| !x.is_finite()) {
            self.push(path, format!("non-finite {what} entry"));
        }
    }
}

/// Collects every invariant violation in `scene`. An empty list means the
/// record is well-formed.
pub fn validate_scene(scene: &SceneRecord, header: &DatasetHeader) -> Vec<Violation> {
    let partition = &header.partition;
    let mut c = Checker { out: Vec::new() };

    if scene.image_id.is_empty() {
        c.push("image_id", "empty image id");
    }
    if scene.width == 0 || scene.height == 0 {
        c.push("width", "image dimensions must be positive");
    }
    for (k, gt) in scene.ground_truth.iter().enumerate() {
        c.bbox(format!("ground_truth[{k}].box"), &gt.bbox);
        if gt.class_id >= partition.num_classes() {
            c.push(
                format!("ground_truth[{k}].class_id"),
                format!("class id {} out of range", gt.class_id),
            );
        }
    }

    for source in [Source::Base, Source::Novel] {
        let out = scene.output(source);
        let root = format!("{source}_output");
        let layout = header.layout(source);
        if out.source != source {
            c.push(
                format!("{root}.source"),
                format!("expected source {source}, found {}", out.source),
            );
        }
        for (k, p) in out.proposals.iter().enumerate() {
            let at = format!("{root}.proposals[{k}]");
            if p.source != source {
                c.push(
                    format!("{at}.source"),
                    format!("proposal source {} != {source}", p.source),
                );
            }
            c.bbox(format!("{at}.box"), &p.bbox);
            c.bbox(format!("{at}.predicted_box"), &p.predicted_box);
            c.unit(format!("{at}.objectness"), p.objectness);
            c.vector(
                format!("{at}.feature"),
                &p.feature,
                layout.feature_dim,
                "feature",
            );
            c.vector(
                format!("{at}.logits"),
                &p.logits,
                layout.logits_len,
                "logits",
            );
        }
        let known = partition.ids_of(source);
        for (k, d) in out.detections.iter().enumerate() {
            let at = format!("{root}.detections[{k}]");
            if d.provenance != source.provenance() {
                c.push(
                    format!("{at}.provenance"),
                    format!("provenance {} != {source}", d.provenance),
                );
            }
            c.bbox(format!("{at}.box"), &d.bbox);
            if !known.contains(&d.class_id) {
                c.push(
                    format!("{at}.class_id"),
                    format!("class id {} not a {source} class", d.class_id),
                );
            }
            c.unit(format!("{at}.score"), d.score);
            if d.proposal_index >= out.proposals.len() {
                c.push(
                    format!("{at}.proposal_index"),
                    format!("proposal index {} out of range", d.proposal_index),
                );
            }
        }
    }
    c.out
}

/// Validates every scene plus cross-record constraints (unique image ids).
/// Violation paths are prefixed with the image id.
pub fn validate_dataset(header: &DatasetHeader, scenes: &[SceneRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Err(e) = header.check() {
        out.push(Violation {
            path: "header".into(),
            message: e.to_string(),
        });
        return out;
    }
    let mut seen = HashSet::new();
    for scene in scenes {
        if !seen.insert(scene.image_id.as_str()) {
            out.push(Violation {
                path: format!("scene[{}]", scene.image_id),
                message: format!("duplicate image_id {:?}", scene.image_id),
            });
        }
        out.extend(
            validate_scene(scene, header)
                .into_iter()
                .map(|v| Violation {
                    path: format!("scene[{}].{}", scene.image_id, v.path),
                    message: v.message,
                }),
        );
    }
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn class_ids() {
        let p = partition();
        assert_eq!(p.class_id_of("car"), Ok(0));
        assert_eq!(p.class_id_of("tractor"), Ok(2));
        assert_eq!(
            p.class_id_of("bicycle"),
            Err(ModelError::UnknownClass("bicycle".into()))
        );
        assert_eq!(p.background_id(), 3);
        assert_eq!(p.name(2), Some("tractor"));
        assert_eq!(p.owner(3), None);
    }

    #[test]
    fn partition_invariants() {
        assert!(ClassPartition::new(vec!["a".into()], vec![]).is_err());
        assert!(ClassPartition::new(vec!["a".into()], vec!["a".into()]).is_err());
    }

    #[test]
    fn well_formed_scene_is_ok() {
        assert!(validate_scene(&scene(), &header()).is_empty());
    }

    #[test]
    fn zero_area_proposal() {
        let mut s = scene();
        s.base_output.proposals[0].bbox = BBox::new_unchecked(4., 0., 4., 10.);
        let v = validate_scene(&s, &header());
        assert_eq!(v.len(), 1);
        assert_eq!(
            v[0].to_string(),
            "zero-area box at base_output.proposals[0].box"
        );
    }

    #[test]
    fn wrong_novel_feature_dim() {
        let mut s = scene();
        s.novel_output.proposals[0].feature.push(1.0);
        let v = validate_scene(&s, &header());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "novel_output.proposals[0].feature");
        assert!(v[0].message.contains("dimension 3 != declared 2"));
    }

    #[test]
    fn detection_checks() {
        let mut s = scene();
        s.base_output.detections[0].class_id = 2;
        s.base_output.detections[0].proposal_index = 5;
        let paths: Vec<_> = validate_scene(&s, &header())
            .into_iter()
            .map(|v| v.path)
            .collect();
        assert_eq!(
            paths,
            [
                "base_output.detections[0].class_id",
                "base_output.detections[0].proposal_index"
            ]
        );
    }

    #[test]
    fn duplicate_image_ids() {
        let v = validate_dataset(&header(), &[scene(), scene()]);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("duplicate image_id \"img0\""));
    }

    #[test]
    fn header_logits_layout() {
        let mut h = header();
        h.base.logits_len = 3;
        assert!(h.check().is_ok());
        h.base.logits_len = 4;
        assert!(h.check().is_err());
    }
}
