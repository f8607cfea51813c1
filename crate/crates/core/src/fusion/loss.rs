use super::net::{backward, forward_cached, FusionInput, FusionNetParams};
use super::FusionError;

/// Default weight of the box-regression term.
pub const DEFAULT_BOX_WEIGHT: f64 = 1.0;

/// Training target for one fusion input.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTarget {
    /// Global class id, or the background id `|B| + |N|`.
    pub class_id: usize,
    /// Regression target; `None` for background.
    pub box_delta: Option<[f64; 4]>,
}

impl FusionTarget {
    pub fn background(background_id: usize) -> Self {
        Self {
            class_id: background_id,
            box_delta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean cross-entropy over the batch.
    pub classification: f64,
    /// Mean smooth-L1 over non-background examples; 0 when there are none.
    pub box_regression: f64,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

type Example = (FusionInput, FusionTarget);

fn check_target(params: &FusionNetParams, t: &FusionTarget) -> Result<(), FusionError> {
    let bg = params.shape.background_id();
    if t.class_id > bg {
        return Err(FusionError::InvalidTarget(format!(
            "class id {} exceeds background id {bg}",
            t.class_id
        )));
    }
    if t.class_id != bg && t.box_delta.is_none() {
        return Err(FusionError::InvalidTarget(format!(
            "class {} target without box delta",
            t.class_id
        )));
    }
    Ok(())
}

fn run(
    params: &FusionNetParams,
    batch: &[Example],
    box_weight: f64,
    mut grad: Option<&mut FusionNetParams>,
) -> Result<LossBreakdown, FusionError> {
    if batch.is_empty() {
        return Err(FusionError::EmptyBatch);
    }
    let bg = params.shape.background_id();
    let n = batch.len() as f64;
    let n_fg = batch.iter().filter(|(_, t)| t.class_id != bg).count();

    let mut ce = 0.0;
    let mut reg = 0.0;
    // Examples are reduced strictly in index order.
    for (input, target) in batch {
        check_target(params, target)?;
        let cache = forward_cached(params, input)?;
        let scores = &cache.output.class_scores;
        ce += log_sum_exp(scores) - scores[target.class_id];

        let mut d_delta = [0.0; 4];
        if let (true, Some(t)) = (target.class_id != bg, target.box_delta) {
            let w = box_weight / n_fg as f64;
            for k in 0..4 {
                let diff = cache.output.box_delta[k] - t[k];
                reg += smooth_l1(diff);
                d_delta[k] = w * smooth_l1_grad(diff);
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let mut d_scores = softmax(scores);
            d_scores[target.class_id] -= 1.0;
            d_scores.iter_mut().for_each(|v| *v /= n);
            backward(params, &cache, &d_scores, &d_delta, g);
        }
    }
    let classification = ce / n;
    let box_regression = if n_fg == 0 { 0.0 } else { reg / n_fg as f64 };
    Ok(LossBreakdown {
        total: classification + box_weight * box_regression,
        classification,
        box_regression,
    })
}

/// Mean cross-entropy plus `box_weight` times the mean smooth-L1 box loss over
/// non-background examples.
pub fn loss(
    params: &FusionNetParams,
    batch: &[Example],
    box_weight: f64,
) -> Result<LossBreakdown, FusionError> {
    run(params, batch, box_weight, None)
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn gradients(
    params: &FusionNetParams,
    batch: &[Example],
    box_weight: f64,
) -> Result<(FusionNetParams, LossBreakdown), FusionError> {
    let mut grad = FusionNetParams::zeros(params.shape);
    let l = run(params, batch, box_weight, Some(&mut grad))?;
    Ok((grad, l))
}
