//! Independent oracles and random fixture builders shared by the integration
//! tests. Nothing here calls into the library's geometry or scoring code.

#![allow(dead_code)]

use detfusion::fusion::{FusionInput, FusionNetParams, FusionTarget, NetShape};
use detfusion::model::{Detection, GroundTruthObject, Provenance};
use detfusion::BBox;
use rand::Rng;

/// Random box with integer corners in `[0, max]`, positive width and height.
pub fn int_box(rng: &mut impl Rng, max: i32) -> BBox {
    let x1 = rng.random_range(0..max);
    let y1 = rng.random_range(0..max);
    let x2 = rng.random_range(x1 + 1..=max);
    let y2 = rng.random_range(y1 + 1..=max);
    BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).unwrap()
}

/// Random real box near `(cx, cy)`, so that sets of them overlap often.
pub fn box_near(rng: &mut impl Rng, cx: f64, cy: f64) -> BBox {
    let w = rng.random_range(5.0..40.0);
    let h = rng.random_range(5.0..40.0);
    let x1 = cx + rng.random_range(-10.0..10.0);
    let y1 = cy + rng.random_range(-10.0..10.0);
    BBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

/// Unit cells covered by both integer boxes.
pub fn cell_intersection(a: &BBox, b: &BBox) -> f64 {
    let mut n = 0u64;
    for x in (a.x1 as i64)..(a.x2 as i64) {
        for y in (a.y1 as i64)..(a.y2 as i64) {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            if cx > b.x1 && cx < b.x2 && cy > b.y1 && cy < b.y2 {
                n += 1;
            }
        }
    }
    n as f64
}

pub fn cell_area(a: &BBox) -> f64 {
    ((a.x2 - a.x1) * (a.y2 - a.y1)).round()
}

pub fn overlap_1d(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    (a2.min(b2) - a1.max(b1)).max(0.0)
}

pub fn iou_ref(a: &BBox, b: &BBox) -> f64 {
    let inter = overlap_1d(a.x1, a.x2, b.x1, b.x2) * overlap_1d(a.y1, a.y2, b.y1, b.y2);
    let area = |r: &BBox| (r.x2 - r.x1) * (r.y2 - r.y1);
    inter / (area(a) + area(b) - inter)
}

pub fn ioa_ref(a: &BBox, b: &BBox) -> f64 {
    let inter = overlap_1d(a.x1, a.x2, b.x1, b.x2) * overlap_1d(a.y1, a.y2, b.y1, b.y2);
    inter / ((a.x2 - a.x1) * (a.y2 - a.y1))
}

pub fn random_provenance(rng: &mut impl Rng) -> Provenance {
    [Provenance::Base, Provenance::Novel, Provenance::Fusion][rng.random_range(0..3)]
}

/// A set of detections clustered around a few centres, with scores drawn from
/// a coarse grid so that ties occur.
pub fn random_detections(rng: &mut impl Rng, max_len: usize, num_classes: usize) -> Vec<Detection> {
    let n = rng.random_range(0..=max_len);
    let centres: Vec<(f64, f64)> = (0..rng.random_range(1..4))
        .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
        .collect();
    (0..n)
        .map(|_| {
            let (cx, cy) = centres[rng.random_range(0..centres.len())];
            Detection {
                bbox: box_near(rng, cx, cy),
                class_id: rng.random_range(0..num_classes),
                score: rng.random_range(0..=10) as f64 / 10.0,
                provenance: random_provenance(rng),
            }
        })
        .collect()
}

pub fn gt(bbox: BBox, class_id: usize) -> GroundTruthObject {
    GroundTruthObject {
        bbox,
        class_id,
        is_pseudo: false,
    }
}

/// Greedy per-image matching written from the textbook description: visit
/// detections best-first, give each the best still-free ground truth box when
/// that IoU is at least 0.5.
pub fn match_ref(dets: &[(f64, BBox)], gts: &[BBox]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].0.partial_cmp(&dets[a].0).unwrap());
    let mut free = vec![true; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in order {
        let best = (0..gts.len())
            .filter(|&j| free[j])
            .map(|j| (j, iou_ref(&dets[i].1, &gts[j])))
            .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((j, v)),
            });
        if let Some((j, v)) = best {
            if v >= 0.5 {
                free[j] = false;
                tp[i] = true;
            }
        }
    }
    tp
}

/// All-point interpolated AP in the sentinel form: pad recall with 0 and 1,
/// precision with 0 and 0, take the running maximum from the right and sum
/// precision over every recall step.
pub fn ap_ref(mut ranked: Vec<(f64, bool)>, n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut rec = vec![0.0];
    let mut prec = vec![0.0];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (_, t) in &ranked {
        if *t {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        rec.push(tp / n_gt as f64);
        prec.push(tp / (tp + fp));
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    Some(
        (1..rec.len())
            .map(|i| (rec[i] - rec[i - 1]) * prec[i])
            .sum(),
    )
}

pub fn small_shape(rng: &mut impl Rng) -> NetShape {
    NetShape {
        base_input_dim: rng.random_range(1..6),
        novel_input_dim: rng.random_range(1..6),
        d_h: rng.random_range(1..6),
        d_t: rng.random_range(1..6),
        num_classes: rng.random_range(1..5),
    }
}

pub fn random_batch(
    rng: &mut impl Rng,
    shape: &NetShape,
    len: usize,
) -> Vec<(FusionInput, FusionTarget)> {
    (0..len)
        .map(|_| {
            let input = FusionInput {
                base_branch: (0..shape.base_input_dim)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect(),
                novel_branch: (0..shape.novel_input_dim)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect(),
                proposal_box: box_near(rng, 50.0, 50.0),
            };
            let class_id = rng.random_range(0..=shape.num_classes);
            let box_delta = (class_id != shape.num_classes)
                .then(|| std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
            (
                input,
                FusionTarget {
                    class_id,
                    box_delta,
                },
            )
        })
        .collect()
}

/// Parameters with every weight and bias uniform in `[-scale, scale]`.
pub fn random_params(rng: &mut impl Rng, shape: NetShape, scale: f64) -> FusionNetParams {
    let mut p = FusionNetParams::zeros(shape);
    for v in p.values_mut() {
        *v = rng.random_range(-scale..=scale);
    }
    p
}

/// Largest elementwise relative error between the analytic gradient and a
/// central difference with step `eps`. Relative error is `|a - n|` over
/// `max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    params: &FusionNetParams,
    batch: &[(FusionInput, FusionTarget)],
    box_weight: f64,
    eps: f64,
) -> f64 {
    use detfusion::fusion::{gradients, loss};
    let (grad, _) = gradients(params, batch, box_weight).unwrap();
    let analytic: Vec<f64> = grad.values().copied().collect();
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *p.values_mut().nth(k).unwrap();
        *p.values_mut().nth(k).unwrap() = orig + eps;
        let up = loss(&p, batch, box_weight).unwrap().total;
        *p.values_mut().nth(k).unwrap() = orig - eps;
        let down = loss(&p, batch, box_weight).unwrap().total;
        *p.values_mut().nth(k).unwrap() = orig;
        let n = (up - down) / (2.0 * eps);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
