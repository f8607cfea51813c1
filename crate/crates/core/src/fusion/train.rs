use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{gradients, loss, FusionTarget, LossBreakdown, DEFAULT_BOX_WEIGHT};
use super::net::{FusionInput, FusionNetParams};
use super::FusionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub box_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.001,
            batch_size: 8,
            momentum: 0.9,
            seed: 0,
            box_weight: DEFAULT_BOX_WEIGHT,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err("epochs and batch_size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(format!("lr = {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum = {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Example-weighted mean of the minibatch losses seen during the epoch.
    pub loss: f64,
    pub classification: f64,
    pub box_regression: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FusionNetParams,
    pub trace: Vec<EpochStats>,
}

/// Minibatch SGD with heavy-ball momentum (`v ← μv + g`, `θ ← θ − lr·v`).
///
/// The visiting order is reshuffled every epoch from a generator seeded with
/// `config.seed`, so identical inputs give bitwise-identical results. Any
/// non-finite loss or gradient aborts with [`FusionError::Diverged`].
pub fn train(
    initial: &FusionNetParams,
    dataset: &[(FusionInput, FusionTarget)],
    config: &TrainConfig,
) -> Result<TrainOutcome, FusionError> {
    if dataset.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    config.check().map_err(FusionError::InvalidConfig)?;

    let mut params = initial.clone();
    let mut velocity = FusionNetParams::zeros(params.shape);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (grad, l) = gradients(&params, &batch, config.box_weight)?;
            if !l.total.is_finite() || !grad.is_finite() {
                return Err(FusionError::Diverged { epoch, batch: b });
            }
            let w = chunk.len() as f64;
            sums.total += w * l.total;
            sums.classification += w * l.classification;
            sums.box_regression += w * l.box_regression;

            for ((p, v), g) in params
                .values_mut()
                .zip(velocity.values_mut())
                .zip(grad.values())
            {
                *v = config.momentum * *v + g;
                *p -= config.lr * *v;
            }
            if !params.is_finite() {
                return Err(FusionError::Diverged { epoch, batch: b });
            }
        }
        let n = dataset.len() as f64;
        trace.push(EpochStats {
            epoch,
            loss: sums.total / n,
            classification: sums.classification / n,
            box_regression: sums.box_regression / n,
        });
    }
    Ok(TrainOutcome { params, trace })
}

/// Loss of `params` over the whole dataset, plus the fraction of examples whose
/// highest class score is the target class.
pub fn dataset_metrics(
    params: &FusionNetParams,
    dataset: &[(FusionInput, FusionTarget)],
    box_weight: f64,
) -> Result<(LossBreakdown, f64), FusionError> {
    let l = loss(params, dataset, box_weight)?;
    let mut correct = 0usize;
    for (x, t) in dataset {
        let out = super::net::forward(params, x)?;
        let argmax = out
            .class_scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        if argmax == Some(t.class_id) {
            correct += 1;
        }
    }
    Ok((l, correct as f64 / dataset.len() as f64))
}
