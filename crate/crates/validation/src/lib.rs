//! Reference implementations and fixtures for validating the detectors.
//!
//! The metric oracles are deliberately naive (quadratic pair counts and
//! threshold sweeps) so they can be checked by eye.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mcdd_core::ScoreSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian-ish blobs: class k is shifted along feature k. Header
/// `f0..f{p-1},label`, labels written as `c0`, `c1`, ...
pub fn write_blobs(path: &Path, classes: usize, per_class: usize, features: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for j in 0..features {
        let _ = write!(text, "f{j},");
    }
    text.push_str("label\n");
    for i in 0..classes * per_class {
        let k = i % classes;
        for j in 0..features {
            let noise: f64 = (0..4).map(|_| rng.random_range(-0.5..0.5)).sum();
            let v = noise + if j % classes == k { 3.0 } else { 0.0 };
            let _ = write!(text, "{v},");
        }
        let _ = writeln!(text, "c{k}");
    }
    std::fs::write(path, text).unwrap();
}

pub fn blobs_file(dir: &Path, classes: usize, per_class: usize, seed: u64) -> PathBuf {
    let path = dir.join("blobs.csv");
    write_blobs(&path, classes, per_class, 6, seed);
    path
}

/// Overrides for a quick run on the blobs file.
pub fn quick_overrides(dataset: &Path, output: &Path) -> Vec<String> {
    vec![
        format!("dataset={}", dataset.display()),
        format!("output_dir={}", output.display()),
        "hidden=[16]".into(),
        "latent_dim=8".into(),
        "epochs=5".into(),
        "batch_size=32".into(),
        "folds=3".into(),
    ]
}

pub fn random_score_set(rng: &mut ChaCha8Rng) -> ScoreSet {
    let n_id = rng.random_range(1..=150);
    let n_ood = rng.random_range(1..=(200 - n_id));
    // coarse grid on half the instances so ties are common
    let coarse = rng.random_bool(0.5);
    let shift = rng.random_range(-0.5..1.5);
    let mut draw = |n: usize, shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-1.0..1.0) + shift;
                if coarse {
                    (v * 5.0).round() / 5.0
                } else {
                    v
                }
            })
            .collect()
    };
    let id = draw(n_id, shift);
    let ood = draw(n_ood, 0.0);
    ScoreSet::new(id, ood).unwrap()
}

fn thresholds(s: &ScoreSet) -> Vec<f64> {
    let mut t: Vec<f64> = s.id_scores().iter().chain(s.ood_scores()).copied().collect();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

fn count_ge(v: &[f64], tau: f64) -> usize {
    v.iter().filter(|&&x| x >= tau).count()
}

/// Every (ID, OOD) pair: win 1, tie 1/2.
pub fn oracle_auroc(s: &ScoreSet) -> f64 {
    let mut wins = 0.0;
    for &a in s.id_scores() {
        for &b in s.ood_scores() {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (s.id_scores().len() * s.ood_scores().len()) as f64
}

/// Threshold at every distinct score; step area `Δrecall · precision`.
pub fn oracle_aupr(s: &ScoreSet) -> f64 {
    let n_id = s.id_scores().len() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for tau in thresholds(s) {
        let tp = count_ge(s.id_scores(), tau) as f64;
        let fp = count_ge(s.ood_scores(), tau) as f64;
        let recall = tp / n_id;
        if tp > 0.0 {
            area += (recall - prev_recall) * tp / (tp + fp);
        }
        prev_recall = recall;
    }
    area
}

/// Largest τ whose ID pass rate reaches `level`; TNR = OOD share below τ.
pub fn oracle_tnr(s: &ScoreSet, level: f64) -> f64 {
    let n = s.id_scores().len() as f64;
    let tau = thresholds(s)
        .into_iter()
        .find(|&t| count_ge(s.id_scores(), t) as f64 >= level * n - 1e-9)
        .unwrap();
    s.ood_scores().iter().filter(|&&x| x < tau).count() as f64 / s.ood_scores().len() as f64
}

/// Best balanced accuracy over all distinct scores and ±∞.
pub fn oracle_detection(s: &ScoreSet) -> f64 {
    let (n_id, n_ood) = (s.id_scores().len() as f64, s.ood_scores().len() as f64);
    let mut taus = thresholds(s);
    taus.extend([f64::INFINITY, f64::NEG_INFINITY]);
    taus.into_iter()
        .map(|t| {
            let tpr = count_ge(s.id_scores(), t) as f64 / n_id;
            let tnr = 1.0 - count_ge(s.ood_scores(), t) as f64 / n_ood;
            0.5 * (tpr + tnr)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: &[f64], ood: &[f64]) -> ScoreSet {
        ScoreSet::new(id.to_vec(), ood.to_vec()).unwrap()
    }

    #[test]
    fn oracles_on_hand_worked_cases() {
        let s = set(&[3.0, 2.0], &[1.0, 2.0]);
        // pairs: (3,1) (3,2) (2,1) win, (2,2) tie
        assert_eq!(oracle_auroc(&s), 3.5 / 4.0);
        // τ=3: recall 1/2, precision 1; τ=2: recall 1, precision 2/3
        assert!((oracle_aupr(&s) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(oracle_tnr(&s, 0.85), 0.5);
        assert_eq!(oracle_detection(&s), 0.75);

        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let same = set(&v, &v);
        assert_eq!(oracle_tnr(&same, 0.85), 0.15);
        assert_eq!(oracle_auroc(&same), 0.5);
        assert_eq!(oracle_detection(&same), 0.5);
    }

    #[test]
    fn random_sets_are_valid_and_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, y) = (random_score_set(&mut a), random_score_set(&mut b));
            assert_eq!(x.id_scores(), y.id_scores());
            assert!(x.id_scores().len() + x.ood_scores().len() <= 200);
        }
    }

    #[test]
    fn blobs_file_has_header_and_rows() {
        let dir = std::env::temp_dir().join(format!("mcdd-blobs-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = blobs_file(&dir, 3, 4, 0);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "f0,f1,f2,f3,f4,f5,label");
        assert_eq!(lines.len(), 13);
        assert!(lines[3].ends_with(",c2"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
