//! Leave-one-class-out benchmark: every (held-out class, fold) scenario is
//! trained and evaluated independently, then averaged per class and overall.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use mcdd_core::metrics::MetricsReport;
use mcdd_core::train::derive_seed;
use mcdd_core::{load_csv, make_loco_scenarios, train_method, Method, ScenarioData, ScenarioSplit, TabularDataset};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub ood_class: usize,
    pub ood_class_name: String,
    pub fold: usize,
    pub n_train: usize,
    pub n_id_test: usize,
    pub n_ood_test: usize,
    pub final_loss: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAverage {
    pub ood_class: usize,
    pub ood_class_name: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkResult {
    pub schema_version: u32,
    pub dataset: String,
    pub method: Method,
    pub config: ExperimentConfig,
    pub class_names: Vec<String>,
    /// Ordered by `(ood_class, fold)`.
    pub rows: Vec<ScenarioRow>,
    pub per_class: Vec<ClassAverage>,
    /// Mean of the per-class averages.
    pub grand_average: MetricsReport,
}

/// Written instead of a result when a scenario fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialResult {
    pub schema_version: u32,
    pub dataset: String,
    pub method: Method,
    pub failed_scenario: (usize, usize),
    pub error: String,
    pub completed_rows: Vec<ScenarioRow>,
}

/// Independent training seed per scenario.
pub fn scenario_seed(seed: u64, ood_class: usize, fold: usize) -> u64 {
    derive_seed(seed, 0x5c00_0000 + ((ood_class as u64) << 16) + fold as u64)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<TabularDataset> {
    Ok(load_csv(&cfg.dataset, &cfg.label_column()?, cfg.has_header)?)
}

pub fn run_scenario(
    cfg: &ExperimentConfig,
    dataset: &TabularDataset,
    split: &ScenarioSplit,
) -> mcdd_core::Result<ScenarioRow> {
    let data = ScenarioData::build(dataset, split, cfg.normalization)?;
    let train_cfg = mcdd_core::TrainConfig {
        seed: scenario_seed(cfg.seed, split.ood_class, split.fold),
        ..cfg.train_config()
    };
    let outcome = train_method(
        cfg.method,
        &data.train,
        &data.train_labels,
        data.n_id_classes,
        &cfg.arch(),
        &train_cfg,
    )?;
    let metrics = outcome
        .model
        .evaluate(&data.id_test, &data.id_test_labels, &data.ood_test)?;
    Ok(ScenarioRow {
        ood_class: split.ood_class,
        ood_class_name: dataset.class_names[split.ood_class].clone(),
        fold: split.fold,
        n_train: data.train.rows(),
        n_id_test: data.id_test.rows(),
        n_ood_test: data.ood_test.rows(),
        final_loss: outcome.history.last().map_or(f64::NAN, |r| r.loss),
        metrics,
    })
}

/// Runs `work` on every item with up to `jobs` threads. Results come back
/// in input order; after the first failure no new items are started.
fn parallel_map<T: Sync, R: Send, E: Send>(
    items: &[T],
    jobs: usize,
    work: impl Fn(&T) -> Result<R, E> + Sync,
) -> Vec<Option<Result<R, E>>> {
    let slots: Mutex<Vec<Option<Result<R, E>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = work(&items[i]);
                if out.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("no poisoned workers")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("no poisoned workers")
}

/// Trains and evaluates every scenario and aggregates the rows. On failure
/// the completed rows are flushed to `<stem>.partial.json` in the output
/// directory when `write_partial` is set.
pub fn run_benchmark_with(
    cfg: &ExperimentConfig,
    dataset: &TabularDataset,
    jobs: usize,
    write_partial: bool,
) -> CliResult<BenchmarkResult> {
    let splits = make_loco_scenarios(dataset, cfg.folds, cfg.seed)?;
    let outcomes = parallel_map(&splits, jobs, |split| run_scenario(cfg, dataset, split));

    let mut rows = Vec::with_capacity(splits.len());
    let mut failure = None;
    for (split, outcome) in splits.iter().zip(outcomes) {
        match outcome {
            Some(Ok(row)) => rows.push(row),
            Some(Err(e)) if failure.is_none() => failure = Some((split.ood_class, split.fold, e)),
            _ => {}
        }
    }
    if let Some((ood_class, fold, source)) = failure {
        if write_partial {
            let partial = PartialResult {
                schema_version: RESULT_SCHEMA_VERSION,
                dataset: dataset.name.clone(),
                method: cfg.method,
                failed_scenario: (ood_class, fold),
                error: source.to_string(),
                completed_rows: rows,
            };
            fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
            let path = output_path(cfg, dataset, ".partial.json");
            write_json(&path, &partial)?;
        }
        return Err(CliError::Scenario {
            ood_class,
            fold,
            source,
        });
    }
    aggregate(cfg, dataset, rows)
}

fn aggregate(cfg: &ExperimentConfig, dataset: &TabularDataset, rows: Vec<ScenarioRow>) -> CliResult<BenchmarkResult> {
    let mut per_class = Vec::new();
    for k in 0..dataset.n_classes() {
        let reports: Vec<MetricsReport> = rows.iter().filter(|r| r.ood_class == k).map(|r| r.metrics).collect();
        per_class.push(ClassAverage {
            ood_class: k,
            ood_class_name: dataset.class_names[k].clone(),
            metrics: MetricsReport::mean(&reports)?,
        });
    }
    let class_reports: Vec<MetricsReport> = per_class.iter().map(|c| c.metrics).collect();
    Ok(BenchmarkResult {
        schema_version: RESULT_SCHEMA_VERSION,
        dataset: dataset.name.clone(),
        method: cfg.method,
        config: cfg.clone(),
        class_names: dataset.class_names.clone(),
        grand_average: MetricsReport::mean(&class_reports)?,
        per_class,
        rows,
    })
}

/// Loads the dataset, runs every scenario and writes JSON, Markdown and CSV
/// reports. Returns the result and the JSON path.
pub fn run_benchmark(cfg: &ExperimentConfig, jobs: usize) -> CliResult<(BenchmarkResult, PathBuf)> {
    let dataset = load_dataset(cfg)?;
    let result = run_benchmark_with(cfg, &dataset, jobs, true)?;
    let json = write_outputs(cfg, &dataset, &result)?;
    Ok((result, json))
}

/// `<output_dir>/<dataset>-<method><suffix>`
pub fn output_path(cfg: &ExperimentConfig, dataset: &TabularDataset, suffix: &str) -> PathBuf {
    cfg.output_dir.join(format!("{}-{}{suffix}", dataset.name, cfg.method))
}

pub fn write_outputs(cfg: &ExperimentConfig, dataset: &TabularDataset, result: &BenchmarkResult) -> CliResult<PathBuf> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let json = output_path(cfg, dataset, ".json");
    write_json(&json, result)?;
    let md = output_path(cfg, dataset, ".md");
    fs::write(&md, markdown_table(result)).map_err(|e| CliError::io(&md, e))?;
    write_csv_table(&output_path(cfg, dataset, ".csv"), result)?;
    Ok(json)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads a result file, rejecting unknown schema versions.
pub fn load_result(path: &Path) -> CliResult<BenchmarkResult> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(RESULT_SCHEMA_VERSION) => {}
        other => {
            return Err(CliError::Config(format!(
                "{}: unsupported result schema version {other:?}",
                path.display()
            )))
        }
    }
    serde_json::from_value(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn mean_of(reports: &[MetricsReport]) -> Option<MetricsReport> {
    MetricsReport::mean(reports).ok()
}

fn close(a: &MetricsReport, b: &MetricsReport, tol: f64) -> bool {
    let pairs = [
        (a.tnr_at_tpr85, b.tnr_at_tpr85),
        (a.auroc, b.auroc),
        (a.aupr_id_positive, b.aupr_id_positive),
        (a.detection_accuracy, b.detection_accuracy),
    ];
    let acc = match (a.classification_accuracy, b.classification_accuracy) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    };
    acc && pairs.iter().all(|(x, y)| (x - y).abs() <= tol)
}

/// Recomputes both levels of averages from the rows.
pub fn averages_consistent(result: &BenchmarkResult, tol: f64) -> bool {
    for class in &result.per_class {
        let rows: Vec<MetricsReport> = result
            .rows
            .iter()
            .filter(|r| r.ood_class == class.ood_class)
            .map(|r| r.metrics)
            .collect();
        match mean_of(&rows) {
            Some(m) if close(&m, &class.metrics, tol) => {}
            _ => return false,
        }
    }
    let classes: Vec<MetricsReport> = result.per_class.iter().map(|c| c.metrics).collect();
    matches!(mean_of(&classes), Some(m) if close(&m, &result.grand_average, tol))
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn pct_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), pct)
}

pub fn markdown_table(result: &BenchmarkResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} / {}\n\nAverages over {} folds, in percent.\n",
        result.dataset, result.method, result.config.folds
    );
    out.push_str("| OOD class | Accuracy | TNR@TPR85 | AUROC | AUPR | Detection acc. |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    let line = |name: &str, m: &MetricsReport| {
        format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            name,
            pct_opt(m.classification_accuracy),
            pct(m.tnr_at_tpr85),
            pct(m.auroc),
            pct(m.aupr_id_positive),
            pct(m.detection_accuracy)
        )
    };
    for c in &result.per_class {
        out.push_str(&line(&format!("{} ({})", c.ood_class, c.ood_class_name), &c.metrics));
    }
    out.push_str(&line("**Average**", &result.grand_average));
    out
}

fn write_csv_table(path: &Path, result: &BenchmarkResult) -> CliResult<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "scope",
        "ood_class",
        "ood_class_name",
        "fold",
        "accuracy",
        "tnr_at_tpr85",
        "auroc",
        "aupr",
        "detection_accuracy",
    ])
    .map_err(csv_err)?;
    let mut record = |scope: &str, class: String, name: &str, fold: String, m: &MetricsReport| {
        let cells = [
            scope.to_string(),
            class,
            name.to_string(),
            fold,
            m.classification_accuracy
                .map_or_else(String::new, |v| (100.0 * v).to_string()),
            (100.0 * m.tnr_at_tpr85).to_string(),
            (100.0 * m.auroc).to_string(),
            (100.0 * m.aupr_id_positive).to_string(),
            (100.0 * m.detection_accuracy).to_string(),
        ];
        w.write_record(&cells)
    };
    for r in &result.rows {
        record(
            "scenario",
            r.ood_class.to_string(),
            &r.ood_class_name,
            r.fold.to_string(),
            &r.metrics,
        )
        .map_err(csv_err)?;
    }
    for c in &result.per_class {
        record(
            "class",
            c.ood_class.to_string(),
            &c.ood_class_name,
            String::new(),
            &c.metrics,
        )
        .map_err(csv_err)?;
    }
    record("average", String::new(), "", String::new(), &result.grand_average).map_err(csv_err)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nu: f64,
    pub grand_average: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub dataset: String,
    pub method: Method,
    pub rows: Vec<SweepRow>,
}

pub const DEFAULT_NU_GRID: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

/// One full benchmark per ν; writes `<stem>-nu-sweep.{json,csv}`.
pub fn sweep_nu(cfg: &ExperimentConfig, nus: &[f64], jobs: usize) -> CliResult<(SweepResult, PathBuf)> {
    if nus.is_empty() {
        return Err(CliError::Config("empty nu grid".into()));
    }
    let dataset = load_dataset(cfg)?;
    let mut rows = Vec::new();
    for &nu in nus {
        let cell = ExperimentConfig { nu, ..cfg.clone() };
        cell.validate()?;
        let result = run_benchmark_with(&cell, &dataset, jobs, false)?;
        rows.push(SweepRow {
            nu,
            grand_average: result.grand_average,
        });
    }
    let sweep = SweepResult {
        schema_version: RESULT_SCHEMA_VERSION,
        dataset: dataset.name.clone(),
        method: cfg.method,
        rows,
    };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let json = output_path(cfg, &dataset, "-nu-sweep.json");
    write_json(&json, &sweep)?;
    let csv_path = output_path(cfg, &dataset, "-nu-sweep.csv");
    let mut text = String::from("nu,accuracy,tnr_at_tpr85,auroc,aupr,detection_accuracy\n");
    for r in &sweep.rows {
        let m = &r.grand_average;
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.nu,
            m.classification_accuracy
                .map_or_else(String::new, |v| (100.0 * v).to_string()),
            100.0 * m.tnr_at_tpr85,
            100.0 * m.auroc,
            100.0 * m.aupr_id_positive,
            100.0 * m.detection_accuracy
        );
    }
    fs::write(&csv_path, text).map_err(|e| CliError::io(&csv_path, e))?;
    Ok((sweep, json))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_input_order() {
        let items: Vec<u64> = (0..40).collect();
        let out = parallel_map(&items, 7, |&x| -> Result<u64, ()> {
            thread::sleep(std::time::Duration::from_micros((40 - x) * 50));
            Ok(x * x)
        });
        let values: Vec<u64> = out.into_iter().map(|o| o.unwrap().unwrap()).collect();
        assert_eq!(values, items.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn parallel_map_stops_after_failure() {
        let items: Vec<usize> = (0..100).collect();
        let out = parallel_map(&items, 1, |&x| if x == 3 { Err(x) } else { Ok(x) });
        assert!(out[3].as_ref().unwrap().is_err());
        assert!(out[4..].iter().all(Option::is_none));
    }

    #[test]
    fn scenario_seeds_differ() {
        assert_ne!(scenario_seed(0, 0, 1), scenario_seed(0, 1, 0));
        assert_eq!(scenario_seed(3, 2, 1), scenario_seed(3, 2, 1));
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(pct(0.9956), "99.56");
        assert_eq!(pct_opt(None), "-");
    }
}
