//! One entry point for training, scoring and evaluating every method.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    euclid_predict, euclid_score, fit_mahalanobis, mahalanobis_predict, mahalanobis_score, msp_score, svdd_score,
    train_deep_svdd, train_euclid_classifier, train_softmax, EuclidCenters, MahalanobisStats, SoftmaxHead, SvddParams,
};
use crate::error::{Error, Result};
use crate::head::{compute_distances, confidence_score, predict_class, train_mcdd, DmLayer};
use crate::matrix::Matrix;
use crate::metrics::{classification_accuracy, MetricsReport, ScoreSet};
use crate::nn::Mlp;
use crate::soft::{bcd_train, soft_confidence_score, soft_predict, SphereParams, SphereUpdate};
use crate::train::{Architecture, History, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DeepMcdd,
    SoftMcdd,
    SoftmaxMsp,
    Mahalanobis,
    DeepSvdd,
    EuclidCenter,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DeepMcdd,
        Method::SoftMcdd,
        Method::SoftmaxMsp,
        Method::Mahalanobis,
        Method::DeepSvdd,
        Method::EuclidCenter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DeepMcdd => "deep-mcdd",
            Method::SoftMcdd => "soft-mcdd",
            Method::SoftmaxMsp => "softmax-msp",
            Method::Mahalanobis => "mahalanobis",
            Method::DeepSvdd => "deep-svdd",
            Method::EuclidCenter => "euclid-center",
        }
    }

    /// Deep-SVDD has no class structure and makes no predictions.
    pub fn classifies(self) -> bool {
        self != Method::DeepSvdd
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown method {s:?}")))
    }
}

/// Trained parameters of any method, tagged by variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum TrainedModel {
    DeepMcdd {
        mlp: Mlp,
        head: DmLayer,
    },
    SoftMcdd {
        mlp: Mlp,
        spheres: SphereParams,
    },
    SoftmaxMsp {
        mlp: Mlp,
        head: SoftmaxHead,
    },
    Mahalanobis {
        mlp: Mlp,
        head: SoftmaxHead,
        stats: MahalanobisStats,
    },
    DeepSvdd {
        mlp: Mlp,
        params: SvddParams,
    },
    EuclidCenter {
        mlp: Mlp,
        centers: EuclidCenters,
    },
}

/// A trained model with its per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: History,
    /// Soft-boundary variant only.
    pub sphere_updates: Vec<SphereUpdate>,
}

pub fn train_method(
    method: Method,
    data: &Matrix,
    labels: &[usize],
    n_classes: usize,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut sphere_updates = Vec::new();
    let (model, history) = match method {
        Method::DeepMcdd => {
            let m = train_mcdd(data, labels, n_classes, arch, cfg)?;
            (
                TrainedModel::DeepMcdd {
                    mlp: m.mlp,
                    head: m.head,
                },
                m.history,
            )
        }
        Method::SoftMcdd => {
            let m = bcd_train(data, labels, n_classes, arch, cfg)?;
            sphere_updates = m.sphere_updates;
            (
                TrainedModel::SoftMcdd {
                    mlp: m.mlp,
                    spheres: m.spheres,
                },
                m.history,
            )
        }
        Method::SoftmaxMsp => {
            let m = train_softmax(data, labels, n_classes, arch, cfg)?;
            (
                TrainedModel::SoftmaxMsp {
                    mlp: m.mlp,
                    head: m.head,
                },
                m.history,
            )
        }
        Method::Mahalanobis => {
            let m = train_softmax(data, labels, n_classes, arch, cfg)?;
            let stats = fit_mahalanobis(&m.mlp.predict(data)?, labels, n_classes)?;
            (
                TrainedModel::Mahalanobis {
                    mlp: m.mlp,
                    head: m.head,
                    stats,
                },
                m.history,
            )
        }
        Method::DeepSvdd => {
            let m = train_deep_svdd(data, arch, cfg)?;
            (
                TrainedModel::DeepSvdd {
                    mlp: m.mlp,
                    params: m.params,
                },
                m.history,
            )
        }
        Method::EuclidCenter => {
            let m = train_euclid_classifier(data, labels, n_classes, arch, cfg)?;
            (
                TrainedModel::EuclidCenter {
                    mlp: m.mlp,
                    centers: m.centers,
                },
                m.history,
            )
        }
    };
    Ok(TrainOutcome {
        model,
        history,
        sphere_updates,
    })
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::DeepMcdd { .. } => Method::DeepMcdd,
            TrainedModel::SoftMcdd { .. } => Method::SoftMcdd,
            TrainedModel::SoftmaxMsp { .. } => Method::SoftmaxMsp,
            TrainedModel::Mahalanobis { .. } => Method::Mahalanobis,
            TrainedModel::DeepSvdd { .. } => Method::DeepSvdd,
            TrainedModel::EuclidCenter { .. } => Method::EuclidCenter,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        match self {
            TrainedModel::DeepMcdd { mlp, .. }
            | TrainedModel::SoftMcdd { mlp, .. }
            | TrainedModel::SoftmaxMsp { mlp, .. }
            | TrainedModel::Mahalanobis { mlp, .. }
            | TrainedModel::DeepSvdd { mlp, .. }
            | TrainedModel::EuclidCenter { mlp, .. } => mlp,
        }
    }

    pub fn latent(&self, data: &Matrix) -> Result<Matrix> {
        self.mlp().predict(data)
    }

    /// Confidence scores from precomputed latents; higher means more ID.
    pub fn scores_from_latent(&self, latent: &Matrix) -> Result<Vec<f64>> {
        match self {
            TrainedModel::DeepMcdd { head, .. } => Ok(confidence_score(&compute_distances(latent, head)?)),
            TrainedModel::SoftMcdd { spheres, .. } => soft_confidence_score(latent, spheres),
            TrainedModel::SoftmaxMsp { head, .. } => msp_score(latent, head),
            TrainedModel::Mahalanobis { stats, .. } => mahalanobis_score(latent, stats),
            TrainedModel::DeepSvdd { params, .. } => svdd_score(latent, params),
            TrainedModel::EuclidCenter { centers, .. } => euclid_score(latent, centers),
        }
    }

    /// Class predictions, or `None` for methods that do not classify.
    pub fn predict_from_latent(&self, latent: &Matrix) -> Result<Option<Vec<usize>>> {
        Ok(Some(match self {
            TrainedModel::DeepMcdd { head, .. } => predict_class(&compute_distances(latent, head)?, head)?,
            TrainedModel::SoftMcdd { spheres, .. } => soft_predict(latent, spheres)?,
            TrainedModel::SoftmaxMsp { head, .. } => head.predict(latent)?,
            TrainedModel::Mahalanobis { stats, .. } => mahalanobis_predict(latent, stats)?,
            TrainedModel::DeepSvdd { .. } => return Ok(None),
            TrainedModel::EuclidCenter { centers, .. } => euclid_predict(latent, centers)?,
        }))
    }

    pub fn scores(&self, data: &Matrix) -> Result<Vec<f64>> {
        self.scores_from_latent(&self.latent(data)?)
    }

    pub fn predict(&self, data: &Matrix) -> Result<Option<Vec<usize>>> {
        self.predict_from_latent(&self.latent(data)?)
    }

    /// Class centers in latent space: Gaussian means, sphere centers, class
    /// means or learned centers. Deep-SVDD has a single row.
    pub fn centers(&self) -> Matrix {
        match self {
            TrainedModel::DeepMcdd { head, .. } => head.means.clone(),
            TrainedModel::SoftMcdd { spheres, .. } => spheres.centers.clone(),
            TrainedModel::SoftmaxMsp { head, .. } => head.weights.clone(),
            TrainedModel::Mahalanobis { stats, .. } => stats.class_means.clone(),
            TrainedModel::DeepSvdd { params, .. } => {
                Matrix::from_vec(1, params.center.len(), params.center.clone()).expect("shape")
            }
            TrainedModel::EuclidCenter { centers, .. } => centers.centers.clone(),
        }
    }

    /// Scores ID and OOD test sets and measures ID classification accuracy.
    pub fn evaluate(&self, id_test: &Matrix, id_labels: &[usize], ood_test: &Matrix) -> Result<MetricsReport> {
        let id_latent = self.latent(id_test)?;
        let ood_latent = self.latent(ood_test)?;
        let scores = ScoreSet::new(
            self.scores_from_latent(&id_latent)?,
            self.scores_from_latent(&ood_latent)?,
        )?;
        let accuracy = match self.predict_from_latent(&id_latent)? {
            Some(pred) => Some(classification_accuracy(&pred, id_labels)?),
            None => None,
        };
        MetricsReport::compute(&scores, accuracy)
    }
}
