//! Distance-metric layer and the Deep-MCDD objective.
//!
//! Each class `k` owns an isotropic Gaussian `N(μ_k, σ_k² I)` in the latent
//! space. The class distance is
//!
//! ```text
//! D_k(x) = ‖f(x) − μ_k‖² / (2σ_k²) + d·log σ_k,    log σ_k = max(0, s_k)
//! ```
//!
//! and training minimizes, per sample,
//! `D_y(x) − (1/ν)·log softmax_k(−D_k(x) + b_k)[y]`.
//! The first addend is the pull-in (KL) term, the second the negative log
//! posterior of the Gaussian discriminant model with log-prior `b_k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Mlp;
use crate::optim::{AdamConfig, AdamState, ParamSlot};
use crate::train::{
    argmax, check_finite, check_labels, derive_seed, log_sum_exp, run_epochs, softmax_into, Architecture, BatchEval,
    History, Objective, TrainConfig, STREAM_HEAD, STREAM_MLP, STREAM_SHUFFLE,
};

/// Parameters of the distance-metric layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmLayer {
    /// `K × d` class means.
    pub means: Matrix,
    /// Unconstrained log standard deviations; the effective value is `max(0, s_k)`.
    pub raw_log_sigma: Vec<f64>,
    /// Class log-priors.
    pub biases: Vec<f64>,
}

impl DmLayer {
    /// Means drawn from `N(0, 0.1²)`, unit standard deviations, uniform prior.
    pub fn new(n_classes: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if n_classes == 0 || latent_dim == 0 {
            return Err(Error::validation("distance layer needs K > 0 and d > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let means = (0..n_classes * latent_dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            means: Matrix::from_vec(n_classes, latent_dim, means)?,
            raw_log_sigma: vec![0.0; n_classes],
            biases: vec![0.0; n_classes],
        })
    }

    pub fn n_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.cols()
    }

    pub fn log_sigma(&self) -> Vec<f64> {
        self.raw_log_sigma.iter().map(|s| s.max(0.0)).collect()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma().into_iter().map(f64::exp).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_classes();
        if k == 0 || self.latent_dim() == 0 {
            return Err(Error::validation("distance layer has no classes"));
        }
        if self.raw_log_sigma.len() != k || self.biases.len() != k {
            return Err(Error::validation(format!(
                "distance layer has {k} means, {} log-sigmas and {} biases",
                self.raw_log_sigma.len(),
                self.biases.len()
            )));
        }
        let finite = self.means.all_finite()
            && self.raw_log_sigma.iter().all(|v| v.is_finite())
            && self.biases.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::numeric("distance layer has non-finite parameters"));
        }
        Ok(())
    }
}

/// `N × K` matrix of class distances `D_k(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceScores(pub Matrix);

impl DistanceScores {
    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn n_samples(&self) -> usize {
        self.0.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.cols()
    }
}

pub fn compute_distances(latent: &Matrix, head: &DmLayer) -> Result<DistanceScores> {
    if latent.cols() != head.latent_dim() {
        return Err(Error::validation(format!(
            "latent width {} does not match head width {}",
            latent.cols(),
            head.latent_dim()
        )));
    }
    check_finite(latent, "latent")?;
    let d = head.latent_dim() as f64;
    let log_sigma = head.log_sigma();
    let inv_two_var: Vec<f64> = log_sigma.iter().map(|l| 0.5 * (-2.0 * l).exp()).collect();
    let mut out = Matrix::zeros(latent.rows(), head.n_classes());
    for (i, f) in latent.row_iter().enumerate() {
        let row = out.row_mut(i);
        for (k, dk) in row.iter_mut().enumerate() {
            let sq = squared_distance(f, head.means.row(k));
            *dk = sq * inv_two_var[k] + d * log_sigma[k];
        }
    }
    Ok(DistanceScores(out))
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Value of the objective and its two addends (batch means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `pull_in + posterior / ν`
    pub total: f64,
    /// Mean `D_{y_i}(x_i)`: the KL term matching each class to its Gaussian.
    pub pull_in: f64,
    /// Mean negative log posterior `−log P(y_i | x_i)`.
    pub posterior: f64,
}

fn check_pair(dist: &DistanceScores, head: &DmLayer) -> Result<()> {
    if dist.n_classes() != head.n_classes() {
        return Err(Error::validation(format!(
            "{} distance columns for {} classes",
            dist.n_classes(),
            head.n_classes()
        )));
    }
    Ok(())
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::validation(format!("nu must be positive, got {nu}")));
    }
    Ok(())
}

pub fn mcdd_loss(dist: &DistanceScores, head: &DmLayer, labels: &[usize], nu: f64) -> Result<LossTerms> {
    check_pair(dist, head)?;
    check_nu(nu)?;
    check_labels(labels, head.n_classes())?;
    if labels.len() != dist.n_samples() || labels.is_empty() {
        return Err(Error::validation(format!(
            "{} labels for {} samples",
            labels.len(),
            dist.n_samples()
        )));
    }
    let mut logits = vec![0.0; head.n_classes()];
    let (mut pull_in, mut posterior) = (0.0, 0.0);
    for (i, &y) in labels.iter().enumerate() {
        let row = dist.0.row(i);
        for (l, (dk, bk)) in logits.iter_mut().zip(row.iter().zip(&head.biases)) {
            *l = -dk + bk;
        }
        pull_in += row[y];
        posterior += log_sum_exp(&logits) - logits[y];
    }
    let n = labels.len() as f64;
    let (pull_in, posterior) = (pull_in / n, posterior / n);
    Ok(LossTerms {
        total: pull_in + posterior / nu,
        pull_in,
        posterior,
    })
}

/// Gradients of the objective with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DmLayerGrads {
    pub means: Matrix,
    pub raw_log_sigma: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct McddBackward {
    pub terms: LossTerms,
    pub d_latent: Matrix,
    pub head: DmLayerGrads,
}

pub fn mcdd_backward(latent: &Matrix, head: &DmLayer, labels: &[usize], nu: f64) -> Result<McddBackward> {
    let dist = compute_distances(latent, head)?;
    let terms = mcdd_loss(&dist, head, labels, nu)?;

    let (k_count, d) = (head.n_classes(), head.latent_dim());
    let weight = 1.0 / labels.len() as f64;
    let log_sigma = head.log_sigma();
    let inv_var: Vec<f64> = log_sigma.iter().map(|l| (-2.0 * l).exp()).collect();

    let mut d_latent = Matrix::zeros(latent.rows(), d);
    let mut d_means = Matrix::zeros(k_count, d);
    let mut d_log_sigma = vec![0.0; k_count];
    let mut d_biases = vec![0.0; k_count];
    let mut logits = vec![0.0; k_count];
    let mut post = vec![0.0; k_count];

    for (i, &y) in labels.iter().enumerate() {
        let row = dist.0.row(i);
        for (l, (dk, bk)) in logits.iter_mut().zip(row.iter().zip(&head.biases)) {
            *l = -dk + bk;
        }
        softmax_into(&logits, &mut post);
        let f = latent.row(i);
        for k in 0..k_count {
            let onehot = if k == y { 1.0 } else { 0.0 };
            // ∂L/∂D_ik
            let g = weight * (onehot + (onehot - post[k]) / nu);
            d_biases[k] += weight * (post[k] - onehot) / nu;
            if g == 0.0 {
                continue;
            }
            let mu = head.means.row(k);
            let scale = g * inv_var[k];
            let dl = d_latent.row_mut(i);
            let dm = d_means.row_mut(k);
            let mut sq = 0.0;
            for j in 0..d {
                let diff = f[j] - mu[j];
                sq += diff * diff;
                dl[j] += scale * diff;
                dm[j] -= scale * diff;
            }
            d_log_sigma[k] += g * (d as f64 - sq * inv_var[k]);
        }
    }
    let d_raw: Vec<f64> = d_log_sigma
        .iter()
        .zip(&head.raw_log_sigma)
        .map(|(g, &s)| if s > 0.0 { *g } else { 0.0 })
        .collect();

    Ok(McddBackward {
        terms,
        d_latent,
        head: DmLayerGrads {
            means: d_means,
            raw_log_sigma: d_raw,
            biases: d_biases,
        },
    })
}

/// `argmax_k (−D_k + b_k)`, lowest index on ties.
pub fn predict_class(dist: &DistanceScores, head: &DmLayer) -> Result<Vec<usize>> {
    check_pair(dist, head)?;
    let mut logits = vec![0.0; head.n_classes()];
    Ok(dist
        .0
        .row_iter()
        .map(|row| {
            for (l, (dk, bk)) in logits.iter_mut().zip(row.iter().zip(&head.biases)) {
                *l = -dk + bk;
            }
            argmax(&logits)
        })
        .collect())
}

/// Class posterior `P(y = k | x) = softmax_k(−D_k + b_k)`.
pub fn posterior(dist: &DistanceScores, head: &DmLayer) -> Result<Matrix> {
    check_pair(dist, head)?;
    let mut out = Matrix::zeros(dist.n_samples(), dist.n_classes());
    let mut logits = vec![0.0; head.n_classes()];
    for (i, row) in dist.0.row_iter().enumerate() {
        for (l, (dk, bk)) in logits.iter_mut().zip(row.iter().zip(&head.biases)) {
            *l = -dk + bk;
        }
        softmax_into(&logits, out.row_mut(i));
    }
    Ok(out)
}

/// `S(x) = −min_k D_k(x)`; larger means more in-distribution.
pub fn confidence_score(dist: &DistanceScores) -> Vec<f64> {
    dist.0
        .row_iter()
        .map(|row| -row.iter().copied().fold(f64::INFINITY, f64::min))
        .collect()
}

struct McddObjective {
    head: DmLayer,
    nu: f64,
}

impl Objective for McddObjective {
    type Grads = DmLayerGrads;

    fn evaluate(&self, latent: &Matrix, labels: &[usize]) -> Result<BatchEval<DmLayerGrads>> {
        let back = mcdd_backward(latent, &self.head, labels, self.nu)?;
        Ok(BatchEval {
            loss: back.terms.total,
            components: vec![("pull_in", back.terms.pull_in), ("posterior", back.terms.posterior)],
            d_latent: back.d_latent,
            grads: back.head,
        })
    }

    fn param_slots<'a>(&'a mut self, grads: &'a DmLayerGrads) -> Vec<ParamSlot<'a>> {
        vec![
            ParamSlot::new("head.means", self.head.means.data_mut(), grads.means.data()),
            ParamSlot::new("head.raw_log_sigma", &mut self.head.raw_log_sigma, &grads.raw_log_sigma),
            ParamSlot::new("head.biases", &mut self.head.biases, &grads.biases),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct McddModel {
    pub mlp: Mlp,
    pub head: DmLayer,
    pub history: History,
}

/// Trains network, means, log-sigmas and biases jointly with minibatch Adam.
pub fn train_mcdd(
    data: &Matrix,
    labels: &[usize],
    n_classes: usize,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<McddModel> {
    cfg.validate()?;
    check_labels(labels, n_classes)?;
    check_finite(data, "training data")?;
    let mut mlp = arch.build(data.cols(), derive_seed(cfg.seed, STREAM_MLP))?;
    let head = DmLayer::new(n_classes, arch.latent_dim, derive_seed(cfg.seed, STREAM_HEAD))?;
    let mut objective = McddObjective { head, nu: cfg.nu };
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut history = History::new();
    run_epochs(
        &mut mlp,
        &mut objective,
        &mut adam,
        data,
        labels,
        0..cfg.epochs,
        cfg.batch_size,
        &mut rng,
        &mut history,
    )?;
    Ok(McddModel {
        mlp,
        head: objective.head,
        history,
    })
}
