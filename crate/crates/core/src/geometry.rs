//! Axis-aligned box arithmetic.
//!
//! Boxes use corner coordinates: `(x1, y1)` is the inclusive top-left corner and
//! `(x2, y2)` the exclusive bottom-right corner. A valid box has strictly positive
//! area and finite coordinates. The ratio functions below assume valid inputs;
//! degenerate boxes are rejected when data is parsed, not special-cased here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in box {0:?}")]
    NonFinite([f64; 4]),
    #[error("zero-area box {0:?}")]
    ZeroArea([f64; 4]),
}

/// An axis-aligned rectangle in image pixel coordinates.
///
/// Serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    /// Builds a box, rejecting non-finite or zero-area rectangles.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = Self { x1, y1, x2, y2 };
        b.check()?;
        Ok(b)
    }

    /// Builds a box without validation. Used by deserialization and fixtures;
    /// call [`BBox::check`] before handing the result to ratio functions.
    pub const fn new_unchecked(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        let arr = self.to_array();
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(arr));
        }
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(GeometryError::ZeroArea(arr));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of the overlap with `other`, zero when disjoint or merely touching.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new_unchecked(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Intersection over the area of `p`: the fraction of `p` covered by `q`.
///
/// Not symmetric. Segregation always passes the proposal under test first.
pub fn ioa(p: &BBox, q: &BBox) -> f64 {
    p.intersection_area(q) / p.area()
}

/// Dense row-major matrix of pairwise overlap values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i}, {j}) out of bounds"
        );
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Largest entry of row `i`, or `None` for a zero-column matrix.
    pub fn row_max(&self, i: usize) -> Option<f64> {
        self.row(i).iter().copied().reduce(f64::max)
    }

    /// Largest entry of column `j`, or `None` for a zero-row matrix.
    pub fn col_max(&self, j: usize) -> Option<f64> {
        (0..self.rows).map(|i| self.get(i, j)).reduce(f64::max)
    }
}

/// `ioa(p[i], q[j])` for every pair.
pub fn pairwise_ioa(p: &[BBox], q: &[BBox]) -> PairMatrix {
    PairMatrix::from_fn(p.len(), q.len(), |i, j| ioa(&p[i], &q[j]))
}

pub fn pairwise_iou(p: &[BBox], q: &[BBox]) -> PairMatrix {
    PairMatrix::from_fn(p.len(), q.len(), |i, j| iou(&p[i], &q[j]))
}
