//! Two-dimensional latent export for plotting.

use std::path::{Path, PathBuf};

use mcdd_core::data::{id_label, zscore_apply, zscore_fit};
use mcdd_core::{make_loco_scenarios, train_method, Matrix, ScenarioData, TabularDataset};
use serde::Serialize;

use crate::benchmark::{load_dataset, scenario_seed};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Which rows the exported model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportScope {
    /// Every class is in-distribution and every row is training data.
    AllClasses,
    /// One leave-one-class-out scenario.
    Scenario { ood_class: usize, fold: usize },
}

/// One CSV line. `class` is the original class id; `ood` is 1 for rows of
/// the held-out class; `split` is `train`, `id-test`, `ood-test` or `center`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentRow {
    pub x: f64,
    pub y: f64,
    pub class: usize,
    pub ood: u8,
    pub split: &'static str,
}

pub fn export_latent_rows(
    cfg: &ExperimentConfig,
    dataset: &TabularDataset,
    scope: ExportScope,
) -> CliResult<Vec<LatentRow>> {
    if cfg.latent_dim != 2 {
        return Err(CliError::Config(format!(
            "latent export needs latent_dim = 2, got {}",
            cfg.latent_dim
        )));
    }
    let arch = cfg.arch();
    let mut rows = Vec::new();
    let mut push = |latent: &Matrix, classes: &[usize], ood: u8, split: &'static str| {
        for (f, &class) in latent.row_iter().zip(classes) {
            rows.push(LatentRow {
                x: f[0],
                y: f[1],
                class,
                ood,
                split,
            });
        }
    };

    match scope {
        ExportScope::AllClasses => {
            let all: Vec<usize> = (0..dataset.n_samples()).collect();
            let stats = zscore_fit(&dataset.features, &all)?;
            let x = zscore_apply(&dataset.features, &stats)?;
            let out = train_method(
                cfg.method,
                &x,
                &dataset.labels,
                dataset.n_classes(),
                &arch,
                &cfg.train_config(),
            )?;
            push(&out.model.latent(&x)?, &dataset.labels, 0, "train");
            let centers = out.model.centers();
            let ids: Vec<usize> = (0..centers.rows()).collect();
            push(&centers, &ids, 0, "center");
        }
        ExportScope::Scenario { ood_class, fold } => {
            let splits = make_loco_scenarios(dataset, cfg.folds, cfg.seed)?;
            let split = splits
                .iter()
                .find(|s| s.ood_class == ood_class && s.fold == fold)
                .ok_or_else(|| CliError::Config(format!("no scenario with ood_class {ood_class} and fold {fold}")))?;
            let data = ScenarioData::build(dataset, split, cfg.normalization)?;
            let train_cfg = mcdd_core::TrainConfig {
                seed: scenario_seed(cfg.seed, ood_class, fold),
                ..cfg.train_config()
            };
            let out = train_method(
                cfg.method,
                &data.train,
                &data.train_labels,
                data.n_id_classes,
                &arch,
                &train_cfg,
            )?;
            let original = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| dataset.labels[i]).collect() };
            push(
                &out.model.latent(&data.train)?,
                &original(&split.train_indices),
                0,
                "train",
            );
            push(
                &out.model.latent(&data.id_test)?,
                &original(&split.id_test_indices),
                0,
                "id-test",
            );
            push(
                &out.model.latent(&data.ood_test)?,
                &original(&split.ood_test_indices),
                1,
                "ood-test",
            );
            // map ID-class center indices back to original class ids
            let centers = out.model.centers();
            let ids: Vec<usize> = (0..dataset.n_classes())
                .filter(|&k| id_label(k, ood_class).is_some())
                .take(centers.rows())
                .collect();
            push(&centers, &ids, 0, "center");
        }
    }
    Ok(rows)
}

pub fn write_latent_csv(path: &Path, rows: &[LatentRow]) -> CliResult<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Trains, exports and writes the CSV; returns its path.
pub fn export_latent(cfg: &ExperimentConfig, scope: ExportScope, out: Option<PathBuf>) -> CliResult<PathBuf> {
    let dataset = load_dataset(cfg)?;
    let rows = export_latent_rows(cfg, &dataset, scope)?;
    let path = out.unwrap_or_else(|| {
        cfg.output_dir
            .join(format!("{}-{}-latent.csv", dataset.name, cfg.method))
    });
    write_latent_csv(&path, &rows)?;
    Ok(path)
}
