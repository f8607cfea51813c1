//! Splits the proposals of the two detectors into valid-base, valid-novel and
//! overlapping buckets by thresholding intersection-over-area.

use crate::geometry::{pairwise_ioa, BBox};
use crate::model::{Proposal, Source};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegregationResult {
    /// Indices into the base proposals, ascending.
    pub valid_base: Vec<usize>,
    /// Indices into the novel proposals, ascending.
    pub valid_novel: Vec<usize>,
    /// Every proposal in neither valid list: base ones first, then novel, each
    /// in index order.
    pub overlapping: Vec<(Source, usize)>,
}

impl SegregationResult {
    pub fn valid(&self, source: Source) -> &[usize] {
        match source {
            Source::Base => &self.valid_base,
            Source::Novel => &self.valid_novel,
        }
    }
}

/// A proposal stays valid while the largest fraction of it covered by any
/// proposal of the other detector is strictly below `tau`. Ties go to the
/// overlapping bucket. An empty opposing set leaves every proposal valid.
pub fn segregate(base: &[Proposal], novel: &[Proposal], tau: f64) -> SegregationResult {
    let base_boxes: Vec<BBox> = base.iter().map(|p| p.bbox).collect();
    let novel_boxes: Vec<BBox> = novel.iter().map(|p| p.bbox).collect();
    segregate_boxes(&base_boxes, &novel_boxes, tau)
}

pub fn segregate_boxes(base: &[BBox], novel: &[BBox], tau: f64) -> SegregationResult {
    // Coverage of each base box by novel boxes, and of each novel box by base boxes.
    let base_cov = pairwise_ioa(base, novel);
    let novel_cov = pairwise_ioa(novel, base);

    let mut out = SegregationResult::default();
    let mut overlapping_novel = Vec::new();
    for i in 0..base.len() {
        if base_cov.row_max(i).is_none_or(|m| m < tau) {
            out.valid_base.push(i);
        } else {
            out.overlapping.push((Source::Base, i));
        }
    }
    for j in 0..novel.len() {
        if novel_cov.row_max(j).is_none_or(|m| m < tau) {
            out.valid_novel.push(j);
        } else {
            overlapping_novel.push((Source::Novel, j));
        }
    }
    out.overlapping.extend(overlapping_novel);
    out
}
