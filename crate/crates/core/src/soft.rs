//! Soft-boundary variant: one hypersphere `(c_k, R_k)` per class, trained by
//! block coordinate descent.
//!
//! Objective, with `α_ik = +1` when `y_i = k` and `−1` otherwise:
//!
//! ```text
//! Σ_k [ R_k² + 1/(νN) Σ_i max{0, α_ik (‖f(x_i) − c_k‖² − R_k²)} ]
//! ```
//!
//! The network is trained with spheres frozen; every `sphere_update_every`
//! epochs the spheres are refit on the full training set: centers become
//! class means of the latents and radii the nearest-rank `(1 − ν)` quantile
//! of each class's distances to its center.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::squared_distance;
use crate::matrix::Matrix;
use crate::nn::Mlp;
use crate::optim::{AdamConfig, AdamState, ParamSlot};
use crate::train::{
    argmin, check_finite, check_labels, derive_seed, run_epochs, Architecture, BatchEval, History, Objective,
    TrainConfig, STREAM_MLP, STREAM_SHUFFLE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereParams {
    /// `K × d`
    pub centers: Matrix,
    pub radii: Vec<f64>,
}

impl SphereParams {
    pub fn n_classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.len() != self.centers.rows() || self.radii.is_empty() {
            return Err(Error::validation(format!(
                "{} centers but {} radii",
                self.centers.rows(),
                self.radii.len()
            )));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || !self.centers.all_finite() {
            return Err(Error::numeric("sphere parameters must be finite with R ≥ 0"));
        }
        Ok(())
    }
}

/// `α_ik`
#[inline]
pub fn assignment_sign(label: usize, class: usize) -> f64 {
    if label == class {
        1.0
    } else {
        -1.0
    }
}

fn check_soft_nu(nu: f64) -> Result<()> {
    if !(nu.is_finite() && nu > 0.0 && nu <= 1.0) {
        return Err(Error::validation(format!("nu must lie in (0, 1], got {nu}")));
    }
    Ok(())
}

fn check_inputs(latent: &Matrix, labels: &[usize], spheres: &SphereParams) -> Result<()> {
    if latent.cols() != spheres.centers.cols() {
        return Err(Error::validation(format!(
            "latent width {} does not match center width {}",
            latent.cols(),
            spheres.centers.cols()
        )));
    }
    if latent.rows() != labels.len() || labels.is_empty() {
        return Err(Error::validation(format!(
            "{} labels for {} samples",
            labels.len(),
            latent.rows()
        )));
    }
    check_labels(labels, spheres.n_classes())?;
    check_finite(latent, "latent")
}

pub fn soft_boundary_loss(latent: &Matrix, labels: &[usize], spheres: &SphereParams, nu: f64) -> Result<f64> {
    check_soft_nu(nu)?;
    check_inputs(latent, labels, spheres)?;
    let scale = 1.0 / (nu * labels.len() as f64);
    let mut hinge = 0.0;
    for (f, &y) in latent.row_iter().zip(labels) {
        for k in 0..spheres.n_classes() {
            let margin = squared_distance(f, spheres.centers.row(k)) - spheres.radii[k].powi(2);
            hinge += (assignment_sign(y, k) * margin).max(0.0);
        }
    }
    let volume: f64 = spheres.radii.iter().map(|r| r * r).sum();
    Ok(volume + scale * hinge)
}

/// Loss and its gradient with respect to the latent rows (spheres fixed).
/// The hinge subgradient at exactly zero is 0.
pub fn soft_boundary_backward(
    latent: &Matrix,
    labels: &[usize],
    spheres: &SphereParams,
    nu: f64,
) -> Result<(f64, Matrix)> {
    let loss = soft_boundary_loss(latent, labels, spheres, nu)?;
    let scale = 1.0 / (nu * labels.len() as f64);
    let mut d_latent = Matrix::zeros(latent.rows(), latent.cols());
    for (i, &y) in labels.iter().enumerate() {
        let f = latent.row(i);
        for k in 0..spheres.n_classes() {
            let c = spheres.centers.row(k);
            let sign = assignment_sign(y, k);
            let margin = squared_distance(f, c) - spheres.radii[k].powi(2);
            if sign * margin > 0.0 {
                let g = d_latent.row_mut(i);
                for j in 0..f.len() {
                    g[j] += scale * sign * 2.0 * (f[j] - c[j]);
                }
            }
        }
    }
    Ok((loss, d_latent))
}

/// Nearest-rank quantile of an ascending slice: the element at rank
/// `ceil(q·n)` (1-based), clamped to `[1, n]`.
pub fn nearest_rank_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // the small slack keeps q·n = 90.000000000001 from jumping a rank
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Refits centers (class means) and radii (nearest-rank `1 − ν` quantile of
/// the class distances).
pub fn update_spheres(latent: &Matrix, labels: &[usize], n_classes: usize, nu: f64) -> Result<SphereParams> {
    check_soft_nu(nu)?;
    check_labels(labels, n_classes)?;
    if latent.rows() != labels.len() {
        return Err(Error::validation(format!(
            "{} labels for {} samples",
            labels.len(),
            latent.rows()
        )));
    }
    check_finite(latent, "latent")?;
    let d = latent.cols();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    let mut centers = Matrix::zeros(n_classes, d);
    let mut radii = vec![0.0; n_classes];
    for (k, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::validation(format!("class {k} has no samples")));
        }
        let center = latent.select_rows(idx).mean_rows();
        let mut dists: Vec<f64> = idx
            .iter()
            .map(|&i| squared_distance(latent.row(i), &center).sqrt())
            .collect();
        dists.sort_by(f64::total_cmp);
        radii[k] = nearest_rank_quantile(&dists, 1.0 - nu);
        centers.row_mut(k).copy_from_slice(&center);
    }
    Ok(SphereParams { centers, radii })
}

/// `−min_k (‖f(x) − c_k‖² − R_k²)`; positive inside some sphere.
pub fn soft_confidence_score(latent: &Matrix, spheres: &SphereParams) -> Result<Vec<f64>> {
    Ok(margins(latent, spheres)?
        .iter()
        .map(|m| -m.iter().copied().fold(f64::INFINITY, f64::min))
        .collect())
}

/// Class with the smallest boundary margin `‖f − c_k‖² − R_k²`.
pub fn soft_predict(latent: &Matrix, spheres: &SphereParams) -> Result<Vec<usize>> {
    Ok(margins(latent, spheres)?.iter().map(|m| argmin(m)).collect())
}

fn margins(latent: &Matrix, spheres: &SphereParams) -> Result<Vec<Vec<f64>>> {
    if latent.cols() != spheres.centers.cols() {
        return Err(Error::validation(format!(
            "latent width {} does not match center width {}",
            latent.cols(),
            spheres.centers.cols()
        )));
    }
    Ok(latent
        .row_iter()
        .map(|f| {
            (0..spheres.n_classes())
                .map(|k| squared_distance(f, spheres.centers.row(k)) - spheres.radii[k].powi(2))
                .collect()
        })
        .collect())
}

/// Number of (sample, class) pairs whose hinge is active.
pub fn hinge_violations(latent: &Matrix, labels: &[usize], spheres: &SphereParams) -> Result<usize> {
    check_inputs(latent, labels, spheres)?;
    let m = margins(latent, spheres)?;
    Ok(m.iter()
        .zip(labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .filter(|(k, &v)| assignment_sign(y, *k) * v > 0.0)
                .count()
        })
        .sum())
}

struct SphereObjective {
    spheres: SphereParams,
    nu: f64,
}

impl Objective for SphereObjective {
    type Grads = ();

    fn evaluate(&self, latent: &Matrix, labels: &[usize]) -> Result<BatchEval<()>> {
        let (loss, d_latent) = soft_boundary_backward(latent, labels, &self.spheres, self.nu)?;
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

/// Objective value on the full training set just before and after one
/// sphere refit, latents held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereUpdate {
    pub after_epoch: usize,
    pub before: f64,
    pub after: f64,
}

impl SphereUpdate {
    /// The refit raised the objective it is meant to lower.
    pub fn increased(&self) -> bool {
        self.after > self.before
    }
}

#[derive(Debug, Clone)]
pub struct SoftModel {
    pub mlp: Mlp,
    pub spheres: SphereParams,
    pub history: History,
    pub sphere_updates: Vec<SphereUpdate>,
}

pub fn bcd_train(
    data: &Matrix,
    labels: &[usize],
    n_classes: usize,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<SoftModel> {
    cfg.validate()?;
    check_soft_nu(cfg.nu)?;
    check_labels(labels, n_classes)?;
    check_finite(data, "training data")?;
    let mut mlp = arch.build(data.cols(), derive_seed(cfg.seed, STREAM_MLP))?;
    let initial = update_spheres(&mlp.predict(data)?, labels, n_classes, cfg.nu)?;
    let mut objective = SphereObjective {
        spheres: initial,
        nu: cfg.nu,
    };
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut history = History::new();
    let mut sphere_updates = Vec::new();

    let mut start = 0;
    while start < cfg.epochs {
        let end = (start + cfg.sphere_update_every).min(cfg.epochs);
        run_epochs(
            &mut mlp,
            &mut objective,
            &mut adam,
            data,
            labels,
            start..end,
            cfg.batch_size,
            &mut rng,
            &mut history,
        )?;
        let latent = mlp.predict(data)?;
        if !latent.all_finite() {
            return Err(Error::Divergence {
                epoch: end - 1,
                detail: "latent representation became non-finite".into(),
            });
        }
        let refit = update_spheres(&latent, labels, n_classes, cfg.nu)?;
        let before = soft_boundary_loss(&latent, labels, &objective.spheres, cfg.nu)?;
        let after = soft_boundary_loss(&latent, labels, &refit, cfg.nu)?;
        sphere_updates.push(SphereUpdate {
            after_epoch: end - 1,
            before,
            after,
        });
        objective.spheres = refit;
        start = end;
    }

    Ok(SoftModel {
        mlp,
        spheres: objective.spheres,
        history,
        sphere_updates,
    })
}
