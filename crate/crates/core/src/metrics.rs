//! ID/OOD evaluation metrics. Every score follows the convention
//! "higher means more in-distribution", and ID is the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    id: Vec<f64>,
    ood: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        if id_scores.is_empty() || ood_scores.is_empty() {
            return Err(Error::validation("ID and OOD score sets must both be non-empty"));
        }
        if id_scores.iter().chain(&ood_scores).any(|s| !s.is_finite()) {
            return Err(Error::numeric("confidence scores must be finite"));
        }
        Ok(Self {
            id: id_scores,
            ood: ood_scores,
        })
    }

    pub fn id_scores(&self) -> &[f64] {
        &self.id
    }

    pub fn ood_scores(&self) -> &[f64] {
        &self.ood
    }

    /// Same scores with the roles of ID and OOD exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            id: self.ood.clone(),
            ood: self.id.clone(),
        }
    }
}

/// Cumulative `(id ≥ τ, ood ≥ τ)` counts at each distinct score τ, descending.
fn sweep(scores: &ScoreSet) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, bool)> = scores
        .id
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// `P(id > ood) + ½·P(id = ood)` via rank sums with average ranks for ties.
pub fn auroc(scores: &ScoreSet) -> f64 {
    let mut all: Vec<(f64, bool)> = scores
        .id
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // ranks are 1-based; a tie block spanning ranks a..=b gets (a+b)/2
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let ids = all[i..j].iter().filter(|e| e.1).count();
        rank_sum += avg_rank * ids as f64;
        i = j;
    }
    let (n_id, n_ood) = (scores.id.len() as f64, scores.ood.len() as f64);
    let u = rank_sum - n_id * (n_id + 1.0) / 2.0;
    u / (n_id * n_ood)
}

/// Area under the precision/recall curve with ID positive, thresholds at
/// every distinct score and step-wise interpolation:
/// `Σ (recall_t − recall_{t−1}) · precision_t`.
pub fn aupr(scores: &ScoreSet) -> f64 {
    let n_id = scores.id.len() as f64;
    let mut area = 0.0;
    let mut prev_tp = 0;
    for (tp, fp) in sweep(scores) {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            area += (tp - prev_tp) as f64 / n_id * precision;
            prev_tp = tp;
        }
    }
    area
}

/// Threshold `τ` is the largest score with `frac(id ≥ τ) ≥ level`; the
/// result is `frac(ood < τ)`.
pub fn tnr_at_tpr(scores: &ScoreSet, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation(format!("TPR level must be in (0, 1), got {level}")));
    }
    let mut id = scores.id.clone();
    id.sort_by(|a, b| b.total_cmp(a));
    let needed = ((level * id.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let tau = id[needed.min(id.len()) - 1];
    let below = scores.ood.iter().filter(|&&s| s < tau).count();
    Ok(below as f64 / scores.ood.len() as f64)
}

/// `max_τ ½(TPR + TNR)` over every distinct score and ±∞, predicting ID
/// when `score ≥ τ`.
pub fn detection_accuracy(scores: &ScoreSet) -> f64 {
    let (n_id, n_ood) = (scores.id.len() as f64, scores.ood.len() as f64);
    // τ = ±∞ both give exactly one half
    let mut best: f64 = 0.5;
    for (tp, fp) in sweep(scores) {
        let balanced = 0.5 * (tp as f64 / n_id + (n_ood - fp as f64) / n_ood);
        best = best.max(balanced);
    }
    best
}

pub fn classification_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("no samples to classify"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub const DEFAULT_TPR_LEVEL: f64 = 0.85;

/// All quantities as fractions in `[0, 1]`. `classification_accuracy` is
/// absent for methods that do not classify.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classification_accuracy: Option<f64>,
    pub tnr_at_tpr85: f64,
    pub auroc: f64,
    pub aupr_id_positive: f64,
    pub detection_accuracy: f64,
}

impl MetricsReport {
    pub fn compute(scores: &ScoreSet, classification_accuracy: Option<f64>) -> Result<Self> {
        Ok(Self {
            classification_accuracy,
            tnr_at_tpr85: tnr_at_tpr(scores, DEFAULT_TPR_LEVEL)?,
            auroc: auroc(scores),
            aupr_id_positive: aupr(scores),
            detection_accuracy: detection_accuracy(scores),
        })
    }

    /// Field-wise mean. Accuracy is averaged only if every report has one.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::validation("cannot average zero reports"));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let accuracy = reports
            .iter()
            .map(|r| r.classification_accuracy)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Ok(Self {
            classification_accuracy: accuracy,
            tnr_at_tpr85: avg(|r| r.tnr_at_tpr85),
            auroc: avg(|r| r.auroc),
            aupr_id_positive: avg(|r| r.aupr_id_positive),
            detection_accuracy: avg(|r| r.detection_accuracy),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(id: &[f64], ood: &[f64]) -> ScoreSet {
        ScoreSet::new(id.to_vec(), ood.to_vec()).unwrap()
    }

    fn distinct_thresholds(s: &ScoreSet) -> Vec<f64> {
        let mut t: Vec<f64> = s.id.iter().chain(&s.ood).copied().collect();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t
    }

    fn frac_ge(v: &[f64], tau: f64) -> f64 {
        v.iter().filter(|&&s| s >= tau).count() as f64 / v.len() as f64
    }

    fn pairwise_auroc(s: &ScoreSet) -> f64 {
        let mut total = 0.0;
        for &a in &s.id {
            for &b in &s.ood {
                total += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (s.id.len() * s.ood.len()) as f64
    }

    fn enumerated_aupr(s: &ScoreSet) -> f64 {
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for tau in distinct_thresholds(s) {
            let tp = s.id.iter().filter(|&&v| v >= tau).count();
            let fp = s.ood.iter().filter(|&&v| v >= tau).count();
            let recall = tp as f64 / s.id.len() as f64;
            if tp > 0 {
                area += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
            }
            prev_recall = recall;
        }
        area
    }

    fn enumerated_tnr(s: &ScoreSet, level: f64) -> f64 {
        let n = s.id.len() as f64;
        let tau = distinct_thresholds(s)
            .into_iter()
            .find(|&t| s.id.iter().filter(|&&v| v >= t).count() as f64 >= level * n - 1e-9)
            .unwrap();
        s.ood.iter().filter(|&&v| v < tau).count() as f64 / s.ood.len() as f64
    }

    fn enumerated_detection(s: &ScoreSet) -> f64 {
        let mut taus = distinct_thresholds(s);
        taus.push(f64::INFINITY);
        taus.push(f64::NEG_INFINITY);
        taus.iter()
            .map(|&t| 0.5 * (frac_ge(&s.id, t) + 1.0 - frac_ge(&s.ood, t)))
            .fold(0.0, f64::max)
    }

    fn random_set(rng: &mut ChaCha8Rng, coarse: bool) -> ScoreSet {
        let n_id = rng.random_range(1..=100);
        let n_ood = rng.random_range(1..=100);
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(-1.0..1.0) + shift;
                    if coarse {
                        (v * 4.0).round() / 4.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let id = draw(n_id, 0.3);
        let ood = draw(n_ood, 0.0);
        ScoreSet::new(id, ood).unwrap()
    }

    #[test]
    fn score_set_validation() {
        assert!(ScoreSet::new(vec![], vec![1.0]).is_err());
        assert!(ScoreSet::new(vec![1.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn perfect_separation() {
        let s = set(&[5.0, 6.0, 7.0], &[1.0, 2.0]);
        assert_eq!(auroc(&s), 1.0);
        assert_eq!(aupr(&s), 1.0);
        assert_eq!(tnr_at_tpr(&s, 0.85).unwrap(), 1.0);
        assert_eq!(detection_accuracy(&s), 1.0);
    }

    #[test]
    fn identical_multisets() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let s = set(&v, &v);
        assert_eq!(auroc(&s), 0.5);
        assert_eq!(detection_accuracy(&s), 0.5);
        // 17 of 20 ID scores must be ≥ τ, so τ = 4 and OOD {1,2,3} fall below
        assert_eq!(tnr_at_tpr(&s, 0.85).unwrap(), 0.15);
        assert!(tnr_at_tpr(&s, 0.85).unwrap() <= 1.0 - 0.85 + 1e-12);

        let flat = set(&[0.7; 5], &[0.7; 3]);
        assert_eq!(auroc(&flat), 0.5);
        assert_eq!(tnr_at_tpr(&flat, 0.85).unwrap(), 0.0);
    }

    #[test]
    fn tnr_level_is_checked() {
        let s = set(&[1.0], &[0.0]);
        assert!(tnr_at_tpr(&s, 0.0).is_err());
        assert!(tnr_at_tpr(&s, 1.0).is_err());
    }

    #[test]
    fn aupr_hand_case() {
        // ranking: id 3, ood 2, id 1
        // τ=3: recall .5 precision 1; τ=2: recall .5; τ=1: recall 1 precision 2/3
        let s = set(&[3.0, 1.0], &[2.0]);
        assert!((aupr(&s) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn aupr_of_random_scores_is_near_one_half() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let id: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
            let ood: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
            let a = aupr(&ScoreSet::new(id, ood).unwrap());
            assert!((a - 0.5).abs() < 0.1, "seed {seed}: {a}");
        }
    }

    #[test]
    fn metrics_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..200 {
            let s = random_set(&mut rng, round % 2 == 0);
            assert!((auroc(&s) - pairwise_auroc(&s)).abs() <= 1e-12);
            assert!((aupr(&s) - enumerated_aupr(&s)).abs() <= 1e-12);
            for level in [0.5, 0.85, 0.95] {
                assert!((tnr_at_tpr(&s, level).unwrap() - enumerated_tnr(&s, level)).abs() <= 1e-12);
            }
            assert!((detection_accuracy(&s) - enumerated_detection(&s)).abs() <= 1e-12);
        }
    }

    #[test]
    fn classification_accuracy_cases() {
        assert_eq!(classification_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(classification_accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(classification_accuracy(&[0], &[0, 1]).unwrap_err().is_validation());
    }

    #[test]
    fn report_mean_keeps_missing_accuracy() {
        let a = MetricsReport {
            classification_accuracy: Some(1.0),
            tnr_at_tpr85: 0.5,
            auroc: 0.75,
            aupr_id_positive: 0.5,
            detection_accuracy: 1.0,
        };
        let b = MetricsReport {
            classification_accuracy: None,
            ..a
        };
        assert_eq!(MetricsReport::mean(&[a, a]).unwrap(), a);
        assert_eq!(MetricsReport::mean(&[a, b]).unwrap().classification_accuracy, None);
    }

    fn scores_strategy() -> impl Strategy<Value = (Vec<i32>, Vec<i32>)> {
        (
            prop::collection::vec(-30i32..30, 1..60),
            prop::collection::vec(-30i32..30, 1..60),
        )
    }

    fn from_ints(v: &[i32]) -> Vec<f64> {
        v.iter().map(|&x| f64::from(x)).collect()
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance((id, ood) in scores_strategy()) {
            let raw = ScoreSet::new(from_ints(&id), from_ints(&ood)).unwrap();
            // exp and an affine map stay strictly increasing on small integers
            let warp = |v: &[i32]| v.iter().map(|&x| (f64::from(x) / 3.0).exp() * 7.0 - 2.0).collect();
            let warped = ScoreSet::new(warp(&id), warp(&ood)).unwrap();
            prop_assert_eq!(auroc(&raw), auroc(&warped));
            prop_assert_eq!(aupr(&raw), aupr(&warped));
            prop_assert_eq!(tnr_at_tpr(&raw, 0.85).unwrap(), tnr_at_tpr(&warped, 0.85).unwrap());
            prop_assert_eq!(detection_accuracy(&raw), detection_accuracy(&warped));
        }

        #[test]
        fn auroc_swap_symmetry((id, ood) in scores_strategy()) {
            let s = ScoreSet::new(from_ints(&id), from_ints(&ood)).unwrap();
            prop_assert!((auroc(&s) + auroc(&s.swapped()) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn metrics_are_bounded((id, ood) in scores_strategy()) {
            let s = ScoreSet::new(from_ints(&id), from_ints(&ood)).unwrap();
            let r = MetricsReport::compute(&s, None).unwrap();
            for v in [r.auroc, r.aupr_id_positive, r.tnr_at_tpr85, r.detection_accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.detection_accuracy >= 0.5);
        }
    }
}
