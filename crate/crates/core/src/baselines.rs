//! Comparison methods built on the same feature extractor:
//!
//! - softmax classifier scored by maximum softmax probability,
//! - tied-covariance Mahalanobis distance on the softmax network's latents,
//! - Deep-SVDD (one unlabeled hypersphere),
//! - Euclidean nearest-center classifier trained by cross-entropy over
//!   negative squared distances.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::squared_distance;
use crate::matrix::Matrix;
use crate::nn::Mlp;
use crate::optim::{AdamConfig, AdamState, ParamSlot};
use crate::train::{
    argmax, argmin, check_finite, check_labels, derive_seed, log_sum_exp, run_epochs, softmax_into, Architecture,
    BatchEval, History, Objective, TrainConfig, STREAM_HEAD, STREAM_MLP, STREAM_SHUFFLE,
};

fn check_width(latent: &Matrix, expected: usize) -> Result<()> {
    if latent.cols() != expected {
        return Err(Error::validation(format!(
            "latent width {} does not match head width {expected}",
            latent.cols()
        )));
    }
    Ok(())
}

fn check_rows(latent: &Matrix, labels: &[usize]) -> Result<()> {
    if latent.rows() != labels.len() || labels.is_empty() {
        return Err(Error::validation(format!(
            "{} labels for {} samples",
            labels.len(),
            latent.rows()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Softmax classifier
// ---------------------------------------------------------------------------

/// Fully connected output layer: logits `w_k · f(x) + b_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHead {
    /// `K × d`
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl SoftmaxHead {
    /// Zero-initialized; the random extractor already breaks symmetry.
    pub fn zeros(n_classes: usize, latent_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(n_classes, latent_dim),
            biases: vec![0.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn logits(&self, latent: &Matrix) -> Result<Matrix> {
        check_width(latent, self.weights.cols())?;
        let mut z = latent.matmul_t(&self.weights)?;
        z.add_row_vector(&self.biases);
        Ok(z)
    }

    pub fn predict(&self, latent: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(latent)?.row_iter().map(argmax).collect())
    }
}

/// `max_k softmax(w_k · f(x) + b_k)`, in `(0, 1]`.
pub fn msp_score(latent: &Matrix, head: &SoftmaxHead) -> Result<Vec<f64>> {
    let logits = head.logits(latent)?;
    Ok(logits
        .row_iter()
        .map(|z| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (max - log_sum_exp(z)).exp()
        })
        .collect())
}

pub struct SoftmaxGrads {
    weights: Matrix,
    biases: Vec<f64>,
}

struct SoftmaxObjective {
    head: SoftmaxHead,
}

/// Mean cross-entropy and `∂/∂logits` for integer targets.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        loss += log_sum_exp(z) - z[y];
        let g = grad.row_mut(i);
        softmax_into(z, g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    (loss / n, grad)
}

impl Objective for SoftmaxObjective {
    type Grads = SoftmaxGrads;

    fn evaluate(&self, latent: &Matrix, labels: &[usize]) -> Result<BatchEval<SoftmaxGrads>> {
        check_rows(latent, labels)?;
        check_labels(labels, self.head.n_classes())?;
        let logits = self.head.logits(latent)?;
        let (loss, g) = cross_entropy(&logits, labels);
        Ok(BatchEval {
            loss,
            components: Vec::new(),
            d_latent: g.matmul(&self.head.weights)?,
            grads: SoftmaxGrads {
                weights: g.t_matmul(latent)?,
                biases: g.sum_rows(),
            },
        })
    }

    fn param_slots<'a>(&'a mut self, grads: &'a SoftmaxGrads) -> Vec<ParamSlot<'a>> {
        vec![
            ParamSlot::new("head.weights", self.head.weights.data_mut(), grads.weights.data()),
            ParamSlot::new("head.biases", &mut self.head.biases, &grads.biases),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxModel {
    pub mlp: Mlp,
    pub head: SoftmaxHead,
    pub history: History,
}

pub fn train_softmax(
    data: &Matrix,
    labels: &[usize],
    n_classes: usize,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<SoftmaxModel> {
    cfg.validate()?;
    check_labels(labels, n_classes)?;
    check_finite(data, "training data")?;
    let mut mlp = arch.build(data.cols(), derive_seed(cfg.seed, STREAM_MLP))?;
    let mut objective = SoftmaxObjective {
        head: SoftmaxHead::zeros(n_classes, arch.latent_dim),
    };
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
    Ok(SoftmaxModel {
        mlp,
        head: objective.head,
        history,
    })
}

// ---------------------------------------------------------------------------
// Mahalanobis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisStats {
    /// `K × d` empirical class means.
    pub class_means: Matrix,
    /// Tied covariance, normalized by the total sample count.
    pub tied_covariance: Matrix,
    /// Inverse of the ridge-regularized covariance.
    pub precision: Matrix,
    pub ridge: f64,
}

/// Ridge added to the covariance diagonal: `1e-6 · trace/d`, floored at 1e-12.
pub fn ridge_for(covariance: &Matrix) -> f64 {
    let d = covariance.rows();
    let trace: f64 = (0..d).map(|i| covariance.get(i, i)).sum();
    (1e-6 * trace / d as f64).max(1e-12)
}

pub fn fit_mahalanobis(latent: &Matrix, labels: &[usize], n_classes: usize) -> Result<MahalanobisStats> {
    check_rows(latent, labels)?;
    check_labels(labels, n_classes)?;
    check_finite(latent, "latent")?;
    let d = latent.cols();
    let mut counts = vec![0usize; n_classes];
    let mut means = Matrix::zeros(n_classes, d);
    for (f, &y) in latent.row_iter().zip(labels) {
        counts[y] += 1;
        for (m, x) in means.row_mut(y).iter_mut().zip(f) {
            *m += x;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::validation(format!(
            "class {k} has {} samples; need at least 2",
            counts[k]
        )));
    }
    for (k, &c) in counts.iter().enumerate() {
        means.row_mut(k).iter_mut().for_each(|m| *m /= c as f64);
    }

    let mut centered = latent.clone();
    for (i, &y) in labels.iter().enumerate() {
        let mu = means.row(y).to_vec();
        for (x, m) in centered.row_mut(i).iter_mut().zip(&mu) {
            *x -= m;
        }
    }
    let mut cov = centered.t_matmul(&centered)?;
    let n = latent.rows() as f64;
    cov.data_mut().iter_mut().for_each(|v| *v /= n);
    // symmetrize away round-off
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.set(i, j, avg);
            cov.set(j, i, avg);
        }
    }

    let ridge = ridge_for(&cov);
    let mut regularized = DMatrix::from_row_slice(d, d, cov.data());
    for i in 0..d {
        regularized[(i, i)] += ridge;
    }
    let chol = regularized
        .cholesky()
        .ok_or_else(|| Error::numeric("tied covariance is not positive definite even after ridge"))?;
    let inv = chol.inverse();
    let mut precision = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            precision.set(i, j, 0.5 * (inv[(i, j)] + inv[(j, i)]));
        }
    }
    if !precision.all_finite() {
        return Err(Error::numeric("precision matrix is not finite"));
    }
    Ok(MahalanobisStats {
        class_means: means,
        tied_covariance: cov,
        precision,
        ridge,
    })
}

/// `N × K` squared Mahalanobis distances to each class mean.
pub fn mahalanobis_distances(latent: &Matrix, stats: &MahalanobisStats) -> Result<Matrix> {
    let d = stats.class_means.cols();
    check_width(latent, d)?;
    let k_count = stats.class_means.rows();
    let mut out = Matrix::zeros(latent.rows(), k_count);
    let mut diff = vec![0.0; d];
    for (i, f) in latent.row_iter().enumerate() {
        for k in 0..k_count {
            for ((o, x), m) in diff.iter_mut().zip(f).zip(stats.class_means.row(k)) {
                *o = x - m;
            }
            let mut q = 0.0;
            for a in 0..d {
                let row = stats.precision.row(a);
                let inner: f64 = row.iter().zip(&diff).map(|(p, v)| p * v).sum();
                q += diff[a] * inner;
            }
            out.set(i, k, q);
        }
    }
    Ok(out)
}

/// Negative minimum squared Mahalanobis distance.
pub fn mahalanobis_score(latent: &Matrix, stats: &MahalanobisStats) -> Result<Vec<f64>> {
    Ok(mahalanobis_distances(latent, stats)?
        .row_iter()
        .map(|r| -r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect())
}

pub fn mahalanobis_predict(latent: &Matrix, stats: &MahalanobisStats) -> Result<Vec<usize>> {
    Ok(mahalanobis_distances(latent, stats)?.row_iter().map(argmin).collect())
}

// ---------------------------------------------------------------------------
// Deep-SVDD
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvddParams {
    pub center: Vec<f64>,
}

/// `−‖f(x) − c‖²`
pub fn svdd_score(latent: &Matrix, params: &SvddParams) -> Result<Vec<f64>> {
    check_width(latent, params.center.len())?;
    Ok(latent
        .row_iter()
        .map(|f| -squared_distance(f, &params.center))
        .collect())
}

/// Mean `‖f(x_i) − c‖²`.
pub fn svdd_loss(latent: &Matrix, params: &SvddParams) -> Result<f64> {
    let scores = svdd_score(latent, params)?;
    Ok(-scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

struct SvddObjective {
    params: SvddParams,
}

impl Objective for SvddObjective {
    type Grads = ();

    fn evaluate(&self, latent: &Matrix, _labels: &[usize]) -> Result<BatchEval<()>> {
        let loss = svdd_loss(latent, &self.params)?;
        let scale = 2.0 / latent.rows() as f64;
        let mut d_latent = latent.clone();
        for row in 0..d_latent.rows() {
            for (x, c) in d_latent.row_mut(row).iter_mut().zip(&self.params.center) {
                *x = scale * (*x - c);
            }
        }
        Ok(BatchEval {
            loss,
            components: Vec::new(),
            d_latent,
            grads: (),
        })
    }

    fn param_slots<'a>(&'a mut self, _grads: &'a ()) -> Vec<ParamSlot<'a>> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct SvddModel {
    pub mlp: Mlp,
    pub params: SvddParams,
    pub history: History,
}

/// Bias-free network; the center is the mean latent of the untrained network
/// and stays frozen. Labels are never used.
pub fn train_deep_svdd(data: &Matrix, arch: &Architecture, cfg: &TrainConfig) -> Result<SvddModel> {
    cfg.validate()?;
    check_finite(data, "training data")?;
    if data.rows() == 0 {
        return Err(Error::validation("empty training set"));
    }
    let mut mlp = arch
        .build(data.cols(), derive_seed(cfg.seed, STREAM_MLP))?
        .without_biases();
    let center = mlp.predict(data)?.mean_rows();
    let mut objective = SvddObjective {
        params: SvddParams { center },
    };
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut history = History::new();
    let unlabeled = vec![0usize; data.rows()];
    run_epochs(
        &mut mlp,
        &mut objective,
        &mut adam,
        data,
        &unlabeled,
        0..cfg.epochs,
        cfg.batch_size,
        &mut rng,
        &mut history,
    )?;
    Ok(SvddModel {
        mlp,
        params: objective.params,
        history,
    })
}

// ---------------------------------------------------------------------------
// Euclidean nearest-center classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclidCenters {
    /// `K × d`
    pub centers: Matrix,
}

fn squared_distances_to(latent: &Matrix, centers: &Matrix) -> Result<Matrix> {
    check_width(latent, centers.cols())?;
    let mut out = Matrix::zeros(latent.rows(), centers.rows());
    for (i, f) in latent.row_iter().enumerate() {
        for k in 0..centers.rows() {
            out.set(i, k, squared_distance(f, centers.row(k)));
        }
    }
    Ok(out)
}

/// `−min_k ‖f(x) − c_k‖²`
pub fn euclid_score(latent: &Matrix, centers: &EuclidCenters) -> Result<Vec<f64>> {
    Ok(squared_distances_to(latent, &centers.centers)?
        .row_iter()
        .map(|r| -r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect())
}

/// Nearest center, lowest index on ties.
pub fn euclid_predict(latent: &Matrix, centers: &EuclidCenters) -> Result<Vec<usize>> {
    Ok(squared_distances_to(latent, &centers.centers)?
        .row_iter()
        .map(argmin)
        .collect())
}

struct EuclidObjective {
    centers: EuclidCenters,
}

impl Objective for EuclidObjective {
    type Grads = Matrix;

    fn evaluate(&self, latent: &Matrix, labels: &[usize]) -> Result<BatchEval<Matrix>> {
        check_rows(latent, labels)?;
        let centers = &self.centers.centers;
        check_labels(labels, centers.rows())?;
        let mut logits = squared_distances_to(latent, centers)?;
        logits.data_mut().iter_mut().for_each(|v| *v = -*v);
        let (loss, g) = cross_entropy(&logits, labels);

        // logit_ik = −‖f_i − c_k‖²
        let mut d_latent = Matrix::zeros(latent.rows(), latent.cols());
        let mut d_centers = Matrix::zeros(centers.rows(), centers.cols());
        for i in 0..latent.rows() {
            let f = latent.row(i);
            for k in 0..centers.rows() {
                let gik = g.get(i, k);
                if gik == 0.0 {
                    continue;
                }
                let c = centers.row(k);
                let dl = d_latent.row_mut(i);
                for j in 0..f.len() {
                    dl[j] -= 2.0 * gik * (f[j] - c[j]);
                }
                let dc = d_centers.row_mut(k);
                for j in 0..f.len() {
                    dc[j] += 2.0 * gik * (f[j] - c[j]);
                }
            }
        }
        Ok(BatchEval {
            loss,
            components: Vec::new(),
            d_latent,
            grads: d_centers,
        })
    }

    fn param_slots<'a>(&'a mut self, grads: &'a Matrix) -> Vec<ParamSlot<'a>> {
        vec![ParamSlot::new(
            "head.centers",
            self.centers.centers.data_mut(),
            grads.data(),
        )]
    }
}

#[derive(Debug, Clone)]
pub struct EuclidModel {
    pub mlp: Mlp,
    pub centers: EuclidCenters,
    pub history: History,
}

pub fn train_euclid_classifier(
    data: &Matrix,
    labels: &[usize],
    n_classes: usize,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<EuclidModel> {
    cfg.validate()?;
    check_labels(labels, n_classes)?;
    check_finite(data, "training data")?;
    let mut mlp = arch.build(data.cols(), derive_seed(cfg.seed, STREAM_MLP))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_HEAD));
    let normal = Normal::new(0.0, 0.1).expect("valid std");
    let init = (0..n_classes * arch.latent_dim)
        .map(|_| normal.sample(&mut rng))
        .collect();
    let mut objective = EuclidObjective {
        centers: EuclidCenters {
            centers: Matrix::from_vec(n_classes, arch.latent_dim, init)?,
        },
    };
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
    Ok(EuclidModel {
        mlp,
        centers: objective.centers,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn single_weight_head(logits: &[f64]) -> (Matrix, SoftmaxHead) {
        // latent = [1], weights column = logits
        let k = logits.len();
        let head = SoftmaxHead {
            weights: Matrix::from_vec(k, 1, logits.to_vec()).unwrap(),
            biases: vec![0.0; k],
        };
        (Matrix::from_vec(1, 1, vec![1.0]).unwrap(), head)
    }

    #[test]
    fn msp_examples() {
        let (x, head) = single_weight_head(&[10.0, -10.0]);
        let s = msp_score(&x, &head).unwrap()[0];
        assert!((s - 1.0 / (1.0 + (-20.0f64).exp())).abs() < 1e-15);

        let (x, head) = single_weight_head(&[0.3; 4]);
        assert!((msp_score(&x, &head).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn msp_matches_naive_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let latent = random_matrix(30, 4, &mut rng);
        let head = SoftmaxHead {
            weights: random_matrix(5, 4, &mut rng),
            biases: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let scores = msp_score(&latent, &head).unwrap();
        for (i, s) in scores.iter().enumerate() {
            let z: Vec<f64> = (0..5)
                .map(|k| (0..4).map(|j| latent.get(i, j) * head.weights.get(k, j)).sum::<f64>() + head.biases[k])
                .collect();
            let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let total: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / total).collect();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let max = p.iter().copied().fold(0.0, f64::max);
            assert!((s - max).abs() <= 1e-12);
            assert!(*s > 0.0 && *s <= 1.0);
        }
    }

    #[test]
    fn softmax_head_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let latent = random_matrix(6, 3, &mut rng);
        let labels = [0, 1, 2, 0, 1, 2];
        let objective = SoftmaxObjective {
            head: SoftmaxHead {
                weights: random_matrix(3, 3, &mut rng),
                biases: vec![0.1, -0.2, 0.3],
            },
        };
        let eval = objective.evaluate(&latent, &labels).unwrap();
        let h = 1e-5;
        let loss_at = |l: &Matrix, head: &SoftmaxHead| cross_entropy(&head.logits(l).unwrap(), &labels).0;
        for idx in 0..latent.data().len() {
            let mut a = latent.clone();
            a.data_mut()[idx] += h;
            let mut b = latent.clone();
            b.data_mut()[idx] -= h;
            let numeric = (loss_at(&a, &objective.head) - loss_at(&b, &objective.head)) / (2.0 * h);
            assert!((numeric - eval.d_latent.data()[idx]).abs() < 1e-8);
        }
        for idx in 0..9 {
            let mut a = objective.head.clone();
            a.weights.data_mut()[idx] += h;
            let mut b = objective.head.clone();
            b.weights.data_mut()[idx] -= h;
            let numeric = (loss_at(&latent, &a) - loss_at(&latent, &b)) / (2.0 * h);
            assert!((numeric - eval.grads.weights.data()[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_covariance_gets_ridge() {
        let latent = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![-3.0, 0.0], vec![-3.0, 0.0]]).unwrap();
        let stats = fit_mahalanobis(&latent, &[0, 0, 1, 1], 2).unwrap();
        assert!(stats.tied_covariance.data().iter().all(|&v| v == 0.0));
        let inv_ridge = 1.0 / stats.ridge;
        assert_eq!(stats.ridge, 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { inv_ridge } else { 0.0 };
                assert!((stats.precision.get(i, j) - expected).abs() <= 1e-6 * inv_ridge);
            }
        }
    }

    #[test]
    fn covariance_hand_case() {
        // one class: (0,0), (2,0), (0,2), (2,2) -> mean (1,1), cov = I
        let latent = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let stats = fit_mahalanobis(&latent, &[0; 4], 1).unwrap();
        assert_eq!(stats.class_means.row(0), &[1.0, 1.0]);
        assert_eq!(stats.tied_covariance.to_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        // correlated: (0,0), (1,1), (2,2), (3,1)
        let latent = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let stats = fit_mahalanobis(&latent, &[0; 4], 1).unwrap();
        // mean (1.5, 1); var x = 1.25, var y = 0.5, cov = 0.5
        let c = &stats.tied_covariance;
        assert!((c.get(0, 0) - 1.25).abs() < 1e-12);
        assert!((c.get(1, 1) - 0.5).abs() < 1e-12);
        assert!((c.get(0, 1) - 0.5).abs() < 1e-12);
        assert_eq!(c.get(0, 1), c.get(1, 0));
    }

    #[test]
    fn class_means_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let latent = random_matrix(40, 3, &mut rng);
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let stats = fit_mahalanobis(&latent, &labels, 4).unwrap();
        for k in 0..4 {
            let rows: Vec<usize> = (0..40).filter(|i| labels[*i] == k).collect();
            let mean = latent.select_rows(&rows).mean_rows();
            for (a, b) in mean.iter().zip(stats.class_means.row(k)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mahalanobis_needs_two_samples_per_class() {
        let latent = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(fit_mahalanobis(&latent, &[0, 0, 1], 2).is_err());
    }

    #[test]
    fn mahalanobis_scoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let latent = random_matrix(60, 3, &mut rng);
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let stats = fit_mahalanobis(&latent, &labels, 3).unwrap();

        let at_mean = Matrix::from_vec(1, 3, stats.class_means.row(1).to_vec()).unwrap();
        assert!(mahalanobis_score(&at_mean, &stats).unwrap()[0].abs() < 1e-12);

        // explicit quadratic form
        let probe = random_matrix(10, 3, &mut rng);
        let dists = mahalanobis_distances(&probe, &stats).unwrap();
        for i in 0..10 {
            for k in 0..3 {
                let mut q = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        q += (probe.get(i, a) - stats.class_means.get(k, a))
                            * stats.precision.get(a, b)
                            * (probe.get(i, b) - stats.class_means.get(k, b));
                    }
                }
                assert!((q - dists.get(i, k)).abs() <= 1e-10 * q.abs().max(1.0));
            }
        }
    }

    #[test]
    fn identity_precision_is_squared_euclidean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let means = random_matrix(3, 2, &mut rng);
        let stats = MahalanobisStats {
            class_means: means.clone(),
            tied_covariance: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            precision: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            ridge: 0.0,
        };
        let probe = random_matrix(15, 2, &mut rng);
        let centers = EuclidCenters { centers: means };
        assert_eq!(
            mahalanobis_score(&probe, &stats).unwrap(),
            euclid_score(&probe, &centers).unwrap()
        );
        assert_eq!(
            mahalanobis_predict(&probe, &stats).unwrap(),
            euclid_predict(&probe, &centers).unwrap()
        );
    }

    #[test]
    fn euclid_examples() {
        let centers = EuclidCenters {
            centers: Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap(),
        };
        let latent = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 5.0]]).unwrap();
        assert_eq!(euclid_predict(&latent, &centers).unwrap(), vec![1, 0]);
        assert_eq!(euclid_score(&latent, &centers).unwrap()[0], 0.0);
    }

    #[test]
    fn euclid_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let latent = random_matrix(5, 2, &mut rng);
        let labels = [0, 1, 2, 1, 0];
        let objective = EuclidObjective {
            centers: EuclidCenters {
                centers: random_matrix(3, 2, &mut rng),
            },
        };
        let eval = objective.evaluate(&latent, &labels).unwrap();
        let h = 1e-5;
        let loss_at = |l: &Matrix, c: &Matrix| {
            let mut z = squared_distances_to(l, c).unwrap();
            z.data_mut().iter_mut().for_each(|v| *v = -*v);
            cross_entropy(&z, &labels).0
        };
        let c = &objective.centers.centers;
        for idx in 0..latent.data().len() {
            let mut a = latent.clone();
            a.data_mut()[idx] += h;
            let mut b = latent.clone();
            b.data_mut()[idx] -= h;
            let numeric = (loss_at(&a, c) - loss_at(&b, c)) / (2.0 * h);
            assert!((numeric - eval.d_latent.data()[idx]).abs() < 1e-8);
        }
        for idx in 0..c.data().len() {
            let mut a = c.clone();
            a.data_mut()[idx] += h;
            let mut b = c.clone();
            b.data_mut()[idx] -= h;
            let numeric = (loss_at(&latent, &a) - loss_at(&latent, &b)) / (2.0 * h);
            assert!((numeric - eval.grads.data()[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn svdd_collapsed_input() {
        let mlp = Architecture::new(vec![4], 3).build(2, 0).unwrap().without_biases();
        let data = Matrix::from_rows(&vec![vec![0.5, -1.0]; 6]).unwrap();
        let latent = mlp.predict(&data).unwrap();
        let params = SvddParams {
            center: latent.mean_rows(),
        };
        assert_eq!(svdd_loss(&latent, &params).unwrap(), 0.0);
        assert!(svdd_score(&latent, &params).unwrap().iter().all(|&s| s == 0.0));
    }
}
