//! Minibatch training loop shared by every head.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{init_params, Mlp, WeightInit};
use crate::optim::{AdamState, ParamSlot};

/// Hyperparameters of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the pull-in term relative to the posterior term.
    pub nu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Soft-boundary variant only: network epochs between sphere updates.
    #[serde(default = "default_sphere_update_every")]
    pub sphere_update_every: usize,
}

fn default_sphere_update_every() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.01,
            seed: 0,
            sphere_update_every: default_sphere_update_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::validation(format!("nu must be positive, got {}", self.nu)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.sphere_update_every == 0 {
            return Err(Error::validation(
                "epochs, batch_size and sphere_update_every must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Hidden widths and latent width of the feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    #[serde(default)]
    pub weight_init: WeightInit,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            latent_dim: 128,
            weight_init: WeightInit::default(),
        }
    }
}

impl Architecture {
    pub fn new(hidden: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            hidden,
            latent_dim,
            weight_init: WeightInit::default(),
        }
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend(&self.hidden);
        dims.push(self.latent_dim);
        dims
    }

    pub fn build(&self, input_dim: usize, seed: u64) -> Result<Mlp> {
        init_params(&self.layer_dims(input_dim), self.weight_init, seed)
    }
}

/// Independent seed for a named sub-stream (init, head init, shuffling).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) const STREAM_MLP: u64 = 1;
pub(crate) const STREAM_HEAD: u64 = 2;
pub(crate) const STREAM_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch objective.
    pub loss: f64,
    /// Named loss components, averaged the same way.
    pub components: BTreeMap<String, f64>,
}

pub type History = Vec<EpochRecord>;

/// Result of evaluating a head's objective on one minibatch.
pub struct BatchEval<G> {
    pub loss: f64,
    pub components: Vec<(&'static str, f64)>,
    pub d_latent: Matrix,
    pub grads: G,
}

/// A differentiable objective on top of the latent representation.
pub trait Objective {
    type Grads;

    fn evaluate(&self, latent: &Matrix, labels: &[usize]) -> Result<BatchEval<Self::Grads>>;

    /// Head tensors to be updated together with the network.
    fn param_slots<'a>(&'a mut self, grads: &'a Self::Grads) -> Vec<ParamSlot<'a>>;
}

/// Runs the given epochs of shuffled minibatch Adam, appending to `history`.
#[allow(clippy::too_many_arguments)]
pub fn run_epochs<O: Objective>(
    mlp: &mut Mlp,
    objective: &mut O,
    adam: &mut AdamState,
    data: &Matrix,
    labels: &[usize],
    epochs: Range<usize>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    history: &mut History,
) -> Result<()> {
    if data.rows() != labels.len() {
        return Err(Error::validation(format!(
            "{} rows but {} labels",
            data.rows(),
            labels.len()
        )));
    }
    if data.rows() == 0 {
        return Err(Error::validation("empty training set"));
    }
    let mut order: Vec<usize> = (0..data.rows()).collect();
    for epoch in epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut component_sums: BTreeMap<String, f64> = BTreeMap::new();
        for chunk in order.chunks(batch_size) {
            let batch = data.select_rows(chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (latent, cache) = mlp.forward(&batch)?;
            let eval = objective.evaluate(&latent, &batch_labels)?;
            if !eval.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("objective evaluated to {}", eval.loss),
                });
            }
            let weight = chunk.len() as f64;
            loss_sum += eval.loss * weight;
            for (name, value) in &eval.components {
                *component_sums.entry((*name).to_string()).or_default() += value * weight;
            }
            let mlp_grads = mlp.backward(&cache, &eval.d_latent)?;
            let mut slots = mlp.param_slots(&mlp_grads);
            slots.extend(objective.param_slots(&eval.grads));
            adam.step(&mut slots).map_err(|e| Error::Divergence {
                epoch,
                detail: e.to_string(),
            })?;
        }
        let n = data.rows() as f64;
        component_sums.values_mut().for_each(|v| *v /= n);
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / n,
            components: component_sums,
        });
    }
    Ok(())
}

pub(crate) fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if n_classes == 0 {
        return Err(Error::validation("need at least one class"));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
        return Err(Error::validation(format!(
            "label {y} at row {i} is outside [0, {n_classes})"
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(latent: &Matrix, what: &str) -> Result<()> {
    if !latent.all_finite() {
        return Err(Error::numeric(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Index of the smallest value; the lowest index wins ties.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = k;
        }
    }
    best
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `softmax(values)` written into `out`.
pub(crate) fn softmax_into(values: &[f64], out: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(values) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}
