use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::flow::CompositeFlowMap;
use crate::model::{HtNet, HtNetParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            epochs: 800,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate or zero epochs is accepted and leaves the
    /// parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid training config: {self:?}")));
        }
        Ok(())
    }
}

/// `w_c = N / (C * n_c)`: inverse class frequency, equal to 1 on balanced data.
pub fn class_weights(counts: &[usize; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateSplit(format!(
            "class {c} has no training samples (counts {counts:?})"
        )));
    }
    let total: usize = counts.iter().sum();
    Ok(counts.map(|n| total as f64 / (NUM_CLASSES * n) as f64))
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &HtNetParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.entries().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut HtNetParams, grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: HtNetParams,
    /// Mean per-sample training loss of each epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch training with class-weighted cross-entropy. Class weights come
/// from the label counts of this training set; the sample order of every
/// epoch is a permutation drawn from `cfg.seed`.
pub fn fit(
    net: &HtNet,
    params: HtNetParams,
    maps: &[&CompositeFlowMap],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    fit_monitored(net, params, maps, labels, cfg, &mut |_, _, _| true)
}

/// [`fit`] with a hook called after every epoch with the epoch index, the
/// current parameters and the epoch loss. Returning `false` stops training.
pub fn fit_monitored(
    net: &HtNet,
    mut params: HtNetParams,
    maps: &[&CompositeFlowMap],
    labels: &[usize],
    cfg: &TrainConfig,
    monitor: &mut dyn FnMut(usize, &HtNetParams, f64) -> bool,
) -> Result<FitOutcome> {
    cfg.validate()?;
    net.check_params(&params)?;
    if maps.is_empty() || maps.len() != labels.len() {
        return Err(Error::Contract(format!(
            "training needs matching non-empty maps and labels, got {} and {}",
            maps.len(),
            labels.len()
        )));
    }
    let mut counts = [0; NUM_CLASSES];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::Contract(format!("label {l} out of range")))? += 1;
    }
    let weights = class_weights(&counts)?;
    let mut adam = Adam::new(cfg, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..maps.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let bmaps: Vec<&CompositeFlowMap> = idx.iter().map(|&i| maps[i]).collect();
            let blabels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let out = net.loss_and_grad(&params, &bmaps, &blabels, &weights)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    param_norm: params.norm(),
                });
            }
            total += out.loss * idx.len() as f64;
            adam.step(&mut params, &out.grads);
        }
        let mean = total / maps.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        loss_curve.push(mean);
        if !monitor(epoch, &params, mean) {
            break;
        }
    }
    Ok(FitOutcome { params, loss_curve })
}

/// Logits for each map, evaluated in batches.
pub fn predict(net: &HtNet, params: &HtNetParams, maps: &[&CompositeFlowMap], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(maps.len());
    for chunk in maps.chunks(batch_size.max(1)) {
        let logits = net.forward(params, chunk)?;
        out.extend(logits.data().chunks(net.config().num_classes).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Index of the largest logit; the first one wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
