use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::grid::Slice;
use crate::math;
use crate::rng::SplitMix64;
use crate::{Error, Result};

use super::model::{backward, forward_eval, forward_train, UNetParams};
use super::ops;
use super::tensor::Tensor;
use super::{NormalizationSpec, UNetConfig};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Rate reached at the last epoch.
    pub final_learning_rate: f64,
    /// Leading fraction of epochs held at `learning_rate`.
    pub flat_fraction: f64,
    /// ℓ₂ penalty on conv and SE weights.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Initialization and shuffling seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            flat_fraction: 0.2,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn paper_scale() -> Self {
        Self { epochs: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(InvalidConfig, "batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.final_learning_rate > 0.0) {
            bail!(InvalidConfig, "learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.flat_fraction) {
            bail!(InvalidConfig, "flat fraction {} must lie in [0, 1]", self.flat_fraction);
        }
        if !(self.weight_decay >= 0.0) {
            bail!(InvalidConfig, "weight decay must be >= 0, got {}", self.weight_decay);
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            bail!(InvalidConfig, "Adam needs 0 <= beta < 1 and epsilon > 0");
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch: flat for the leading
/// `flat_fraction` of epochs, then geometric decay that lands on
/// `final_learning_rate` at the last epoch.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    let e = cfg.epochs;
    if e <= 1 {
        return cfg.learning_rate;
    }
    let flat = (math::round(e as f64 * cfg.flat_fraction) as usize).clamp(1, e - 1);
    if epoch < flat {
        return cfg.learning_rate;
    }
    let t = ((epoch - flat + 1) as f64 / (e - flat) as f64).min(1.0);
    cfg.learning_rate * math::pow(cfg.final_learning_rate / cfg.learning_rate, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean squared error in normalized units.
    pub loss: f64,
}

/// Adam moment estimates, one buffer per trainable tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &mut UNetParams, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let sizes: Vec<usize> = params.params_mut().iter().map(|p| p.tensor.len()).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            steps: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update from the accumulated gradients; `weight_decay · w` is added
    /// to the gradient of decayed tensors first.
    pub fn step(&mut self, params: &mut UNetParams, lr: f64, weight_decay: f64) {
        self.steps += 1;
        let c1 = 1.0 - math::pow(self.beta1, self.steps as f64);
        let c2 = 1.0 - math::pow(self.beta2, self.steps as f64);
        for (k, p) in params.params_mut().into_iter().enumerate() {
            let decay = if p.decay { weight_decay } else { 0.0 };
            let t = p.tensor;
            let zero = vec![0.0; t.len()];
            let g = t.grad.as_ref().unwrap_or(&zero).clone();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..t.data.len() {
                let gi = g[i] + decay * t.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                t.data[i] -= lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + self.epsilon);
            }
        }
    }
}

fn batch_tensor(slices: &[&Slice], scale: f64) -> Result<Tensor> {
    Tensor::from_slices(slices, 1.0 / scale)
}

/// Train from a fresh initialization; see [`train_observed`].
pub fn train(
    dataset: &[(Slice, Slice)],
    unet: &UNetConfig,
    cfg: &TrainConfig,
    norm: NormalizationSpec,
) -> Result<(UNetParams, Vec<LossRecord>)> {
    let params = UNetParams::init(unet, cfg.seed)?;
    train_observed(params, dataset, cfg, norm, |_| {})
}

/// Mini-batch Adam on the ℓ₂ artifact loss.
///
/// `dataset` holds `(input, target artifact)` pairs in μm⁻¹; both are divided
/// by `norm.scale`. Sample order is reshuffled every epoch from the seed.
/// `observer` sees every loss record as it is produced.
pub fn train_observed(
    mut params: UNetParams,
    dataset: &[(Slice, Slice)],
    cfg: &TrainConfig,
    norm: NormalizationSpec,
    mut observer: impl FnMut(&LossRecord),
) -> Result<(UNetParams, Vec<LossRecord>)> {
    cfg.validate()?;
    NormalizationSpec::new(norm.scale)?;
    if dataset.is_empty() {
        bail!(InvalidConfig, "training set is empty");
    }
    for (x, t) in dataset {
        if x.width != t.width || x.height != t.height {
            bail!(ShapeMismatch, "input {}x{} and target {}x{} differ", x.width, x.height, t.width, t.height);
        }
    }
    let mut adam = Adam::new(&mut params, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        SplitMix64::stream(cfg.seed, epoch as u64).shuffle(&mut order);
        let lr = learning_rate(cfg, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Slice> = chunk.iter().map(|&i| &dataset[i].0).collect();
            let targets: Vec<&Slice> = chunk.iter().map(|&i| &dataset[i].1).collect();
            let x = batch_tensor(&inputs, norm.scale)?;
            let t = batch_tensor(&targets, norm.scale)?;
            params.zero_grad();
            let (y, tape) = forward_train(&params, &x)?;
            let loss = ops::l2_loss(&y, &t)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            backward(&mut params, &tape, &ops::l2_loss_grad(&y, &t)?)?;
            params.apply_running_stats(&tape);
            adam.step(&mut params, lr, cfg.weight_decay);
            let rec = LossRecord { step, epoch, lr, loss };
            observer(&rec);
            log.push(rec);
            step += 1;
        }
    }
    params.zero_grad();
    Ok((params, log))
}

/// Artifact-corrected slice: `input − scale · net(input / scale)`.
pub fn infer(input: &Slice, params: &UNetParams, norm: &NormalizationSpec) -> Result<Slice> {
    NormalizationSpec::new(norm.scale)?;
    let x = batch_tensor(&[input], norm.scale)?;
    let artifact = forward_eval(params, &x)?;
    let data = input.data.iter().zip(&artifact.data).map(|(v, a)| v - norm.scale * a).collect();
    Slice::new(input.width, input.height, input.pixel_size, data)
}
