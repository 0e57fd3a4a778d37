//! Central finite-difference checks of every analytic gradient.
//!
//! Each group builds a small random instance, perturbs every scalar
//! parameter by `±h` and compares against backprop. Instances whose ReLU
//! pre-activations or hinge margins sit close to a kink are redrawn so the
//! two-sided difference never straddles a non-differentiable point.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{compute_distances, mcdd_backward, mcdd_loss, DmLayer};
use crate::matrix::Matrix;
use crate::nn::{init_params, Mlp, WeightInit};
use crate::soft::{assignment_sign, soft_boundary_backward, soft_boundary_loss, SphereParams};
use crate::train::derive_seed;

/// Denominator floor of the relative error, so entries whose gradient is
/// essentially zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradGroup {
    /// Network weights and biases under a squared-error probe loss.
    NnCore,
    /// Network and distance-layer parameters under the class-conditional objective.
    McddHead,
    /// Network parameters under the soft-boundary objective, spheres fixed.
    SoftMcdd,
}

impl GradGroup {
    pub const ALL: [GradGroup; 3] = [GradGroup::NnCore, GradGroup::McddHead, GradGroup::SoftMcdd];

    pub fn name(self) -> &'static str {
        match self {
            GradGroup::NnCore => "nn-core",
            GradGroup::McddHead => "mcdd-head",
            GradGroup::SoftMcdd => "soft-mcdd",
        }
    }
}

impl fmt::Display for GradGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GradGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown gradient group {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Negative control: distort the analytic gradient of this group.
    pub corrupt: Option<GradGroup>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: GradGroup,
    pub max_rel_error: f64,
    /// Tensor holding the worst entry.
    pub worst_param: String,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn failed_groups(&self) -> Vec<GradGroup> {
        self.groups.iter().filter(|g| !g.passed).map(|g| g.group).collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Param {
    Weights(usize),
    Biases(usize),
    Means,
    RawLogSigma,
    HeadBiases,
}

impl Param {
    fn name(self) -> String {
        match self {
            Param::Weights(l) => format!("mlp.layers[{l}].weights"),
            Param::Biases(l) => format!("mlp.layers[{l}].biases"),
            Param::Means => "head.means".into(),
            Param::RawLogSigma => "head.raw_log_sigma".into(),
            Param::HeadBiases => "head.biases".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Instance {
    group: GradGroup,
    mlp: Mlp,
    data: Matrix,
    labels: Vec<usize>,
    target: Matrix,
    head: DmLayer,
    spheres: SphereParams,
    nu: f64,
}

impl Instance {
    fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for l in 0..self.mlp.layers.len() {
            out.push(Param::Weights(l));
            out.push(Param::Biases(l));
        }
        if self.group == GradGroup::McddHead {
            out.extend([Param::Means, Param::RawLogSigma, Param::HeadBiases]);
        }
        out
    }

    fn tensor_mut(&mut self, p: Param) -> &mut [f64] {
        match p {
            Param::Weights(l) => self.mlp.layers[l].weights.data_mut(),
            Param::Biases(l) => &mut self.mlp.layers[l].biases,
            Param::Means => self.head.means.data_mut(),
            Param::RawLogSigma => &mut self.head.raw_log_sigma,
            Param::HeadBiases => &mut self.head.biases,
        }
    }

    fn loss(&self) -> Result<f64> {
        let latent = self.mlp.predict(&self.data)?;
        match self.group {
            GradGroup::NnCore => Ok(probe_loss(&latent, &self.target).0),
            GradGroup::McddHead => {
                let dist = compute_distances(&latent, &self.head)?;
                Ok(mcdd_loss(&dist, &self.head, &self.labels, self.nu)?.total)
            }
            GradGroup::SoftMcdd => soft_boundary_loss(&latent, &self.labels, &self.spheres, self.nu),
        }
    }

    /// Analytic gradient per parameter, in [`Instance::params`] order.
    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (latent, cache) = self.mlp.forward(&self.data)?;
        let mut head_grads = None;
        let d_latent = match self.group {
            GradGroup::NnCore => probe_loss(&latent, &self.target).1,
            GradGroup::McddHead => {
                let back = mcdd_backward(&latent, &self.head, &self.labels, self.nu)?;
                head_grads = Some(back.head);
                back.d_latent
            }
            GradGroup::SoftMcdd => soft_boundary_backward(&latent, &self.labels, &self.spheres, self.nu)?.1,
        };
        let mlp_grads = self.mlp.backward(&cache, &d_latent)?;
        let mut out = Vec::new();
        for layer in mlp_grads.layers {
            out.push(layer.weights.into_vec());
            out.push(layer.biases);
        }
        if let Some(h) = head_grads {
            out.push(h.means.into_vec());
            out.push(h.raw_log_sigma);
            out.push(h.biases);
        }
        Ok(out)
    }

    fn near_kink(&self) -> Result<bool> {
        let (latent, cache) = self.mlp.forward(&self.data)?;
        let hidden = &cache.pre[..cache.pre.len() - 1];
        if hidden.iter().flat_map(|m| m.data()).any(|v| v.abs() < KINK_MARGIN) {
            return Ok(true);
        }
        if self.group == GradGroup::SoftMcdd {
            for (f, &y) in latent.row_iter().zip(&self.labels) {
                for k in 0..self.spheres.n_classes() {
                    let c = self.spheres.centers.row(k);
                    let sq: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    let margin = assignment_sign(y, k) * (sq - self.spheres.radii[k].powi(2));
                    if margin.abs() < KINK_MARGIN {
                        return Ok(true);
                    }
                }
            }
        }
        Ok(false)
    }
}

/// `½·mean ‖f − t‖²` and its latent gradient.
fn probe_loss(latent: &Matrix, target: &Matrix) -> (f64, Matrix) {
    let n = latent.rows() as f64;
    let mut grad = latent.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        loss += 0.5 * diff * diff;
        *g = diff / n;
    }
    (loss / n, grad)
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn draw_instance(group: GradGroup, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (n, p, latent_dim, k) = (6, 4, 3, 3);
    let mlp = init_params(&[p, 6, 5, latent_dim], WeightInit::He, rng.random())?;
    let mut mlp = mlp;
    // nonzero biases so their gradients are exercised off the init point
    for layer in &mut mlp.layers {
        layer.biases.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    let raw_log_sigma = (0..k)
        .map(|i| {
            let v = rng.random_range(0.05..0.6);
            if i == 0 {
                -v
            } else {
                v
            }
        })
        .collect();
    Ok(Instance {
        group,
        mlp,
        data: uniform(n, p, 1.0, rng),
        labels: (0..n).map(|i| (i + rng.random_range(0..k)) % k).collect(),
        target: uniform(n, latent_dim, 1.0, rng),
        head: DmLayer {
            means: uniform(k, latent_dim, 1.0, rng),
            raw_log_sigma,
            biases: (0..k).map(|_| rng.random_range(-0.5..0.5)).collect(),
        },
        spheres: SphereParams {
            centers: uniform(k, latent_dim, 1.0, rng),
            radii: (0..k).map(|_| rng.random_range(0.3..1.5)).collect(),
        },
        nu: match group {
            GradGroup::SoftMcdd => rng.random_range(0.1..1.0),
            _ => rng.random_range(0.5..2.0),
        },
    })
}

fn check_group(group: GradGroup, seed: u64, opts: &GradcheckOptions) -> Result<GroupReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6c00 + group as u64));
    let mut instance = draw_instance(group, &mut rng)?;
    let mut attempts = 1;
    while instance.near_kink()? {
        if attempts == 1000 {
            return Err(Error::numeric(format!(
                "{group}: could not draw an instance away from kinks"
            )));
        }
        instance = draw_instance(group, &mut rng)?;
        attempts += 1;
    }

    let mut analytic = instance.analytic()?;
    if opts.corrupt == Some(group) {
        for g in analytic.iter_mut().flatten() {
            *g = 1.1 * *g + 1e-3;
        }
    }

    let mut report = GroupReport {
        group,
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
        passed: true,
    };
    let h = opts.step;
    for (param, grads) in instance.params().into_iter().zip(&analytic) {
        let len = instance.tensor_mut(param).len();
        for idx in 0..len {
            let original = instance.tensor_mut(param)[idx];
            instance.tensor_mut(param)[idx] = original + h;
            let up = instance.loss()?;
            instance.tensor_mut(param)[idx] = original - h;
            let down = instance.loss()?;
            instance.tensor_mut(param)[idx] = original;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads[idx], numeric);
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = param.name();
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error <= opts.tolerance;
    Ok(report)
}

pub fn run_gradcheck(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let groups = GradGroup::ALL
        .into_iter()
        .map(|g| check_group(g, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport {
        seed,
        tolerance: opts.tolerance,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let report = run_gradcheck(0, &GradcheckOptions::default()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.groups.len(), 3);
        let mcdd = &report.groups[1];
        // 4·6 + 6 + 6·5 + 5 + 5·3 + 3 network entries, 9 + 3 + 3 head entries
        assert_eq!(mcdd.checked, 83 + 15);
    }

    #[test]
    fn corruption_is_caught_in_the_right_group() {
        let opts = GradcheckOptions {
            corrupt: Some(GradGroup::SoftMcdd),
            ..GradcheckOptions::default()
        };
        let report = run_gradcheck(0, &opts).unwrap();
        assert_eq!(report.failed_groups(), vec![GradGroup::SoftMcdd]);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let opts = GradcheckOptions::default();
        assert_eq!(run_gradcheck(7, &opts).unwrap(), run_gradcheck(7, &opts).unwrap());
    }

    #[test]
    fn group_names_round_trip() {
        for g in GradGroup::ALL {
            assert_eq!(g.name().parse::<GradGroup>().unwrap(), g);
        }
        assert!("bogus".parse::<GradGroup>().is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 1e-9), 1e-3);
    }
}
