//! CSV ingestion, z-score normalization and leave-one-class-out splits.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::train::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub features: Matrix,
    /// Dense class ids in `[0, class_names.len())`.
    pub labels: Vec<usize>,
    /// Original label strings in first-occurrence order.
    pub class_names: Vec<String>,
}

impl TabularDataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Which column of the CSV holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
    /// The final column.
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = Error;

    /// `last`, a non-negative integer, or a header name.
    fn from_str(s: &str) -> Result<Self> {
        if s == "last" {
            Ok(LabelColumn::Last)
        } else if let Ok(i) = s.parse::<usize>() {
            Ok(LabelColumn::Index(i))
        } else if s.is_empty() {
            Err(Error::validation("empty label column"))
        } else {
            Ok(LabelColumn::Name(s.to_string()))
        }
    }
}

fn parse_err(path: &Path, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message: message.into(),
    }
}

/// Loads a comma-separated file. Rows and columns in error messages are
/// 1-based and count the header line.
pub fn load_csv(path: &Path, label_column: &LabelColumn, has_header: bool) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;

    let mut records = reader.records();
    let mut header: Option<Vec<String>> = None;
    let mut line = 0usize;
    if has_header {
        line += 1;
        match records.next() {
            Some(r) => header = Some(r.map_err(|e| csv_io(path, e))?.iter().map(String::from).collect()),
            None => return Err(parse_err(path, 1, 0, "missing header row")),
        }
    }

    let mut width = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;
    let resolve = |width: usize, header: &Option<Vec<String>>| -> Result<usize> {
        match label_column {
            LabelColumn::Index(i) if *i < width => Ok(*i),
            LabelColumn::Index(i) => Err(Error::validation(format!(
                "label column {i} out of range for {width} columns"
            ))),
            LabelColumn::Last => Ok(width - 1),
            LabelColumn::Name(name) => header
                .as_ref()
                .ok_or_else(|| Error::validation("label column by name requires a header"))?
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::validation(format!("no column named {name:?}"))),
        }
    };
    if let Some(w) = width {
        label_idx = Some(resolve(w, &header)?);
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for record in records {
        line += 1;
        let record = record.map_err(|e| csv_io(path, e))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(
                path,
                line,
                record.len().min(w) + 1,
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        if w < 2 {
            return Err(parse_err(path, line, 1, "need a label and at least one feature"));
        }
        let li = match label_idx {
            Some(i) => i,
            None => *label_idx.insert(resolve(w, &header)?),
        };
        for (c, field) in record.iter().enumerate() {
            if c == li {
                let next = ids.len();
                let id = *ids.entry(field.to_string()).or_insert_with(|| {
                    class_names.push(field.to_string());
                    next
                });
                labels.push(id);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(path, line, c + 1, format!("not a number: {field:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(path, line, c + 1, format!("non-finite value {field:?}")));
                }
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::validation(format!("{} contains no data rows", path.display())));
    }
    let p = width.unwrap_or(1) - 1;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TabularDataset {
        name,
        features: Matrix::from_vec(labels.len(), p, values)?,
        labels,
        class_names,
    })
}

/// Loads a numeric CSV with no label column.
pub fn load_unlabeled_csv(path: &Path, has_header: bool) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let line = r + 1 + usize::from(has_header);
        let record = record.map_err(|e| csv_io(path, e))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(
                path,
                line,
                record.len().min(w) + 1,
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(path, line, c + 1, format!("not a finite number: {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::validation(format!("{} contains no data rows", path.display())));
    }
    Matrix::from_vec(rows, width.unwrap_or(0), values)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    let position = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => parse_err(path, position, 0, format!("{other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; exactly 1 for constant attributes.
    pub std: Vec<f64>,
}

pub fn zscore_fit(features: &Matrix, indices: &[usize]) -> Result<NormalizationStats> {
    if indices.is_empty() {
        return Err(Error::validation("cannot fit normalization on zero rows"));
    }
    let rows = features.select_rows(indices);
    let mean = rows.mean_rows();
    let n = indices.len() as f64;
    let mut var = vec![0.0; features.cols()];
    for row in rows.row_iter() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(NormalizationStats { mean, std })
}

impl NormalizationStats {
    fn check(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.mean.len() {
            return Err(Error::validation(format!(
                "{} features but statistics for {}",
                features.cols(),
                self.mean.len()
            )));
        }
        Ok(())
    }
}

pub fn zscore_apply(features: &Matrix, stats: &NormalizationStats) -> Result<Matrix> {
    stats.check(features)?;
    let mut out = features.clone();
    for r in 0..out.rows() {
        for ((x, m), s) in out.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = (*x - m) / s;
        }
    }
    Ok(out)
}

pub fn zscore_invert(normalized: &Matrix, stats: &NormalizationStats) -> Result<Matrix> {
    stats.check(normalized)?;
    let mut out = normalized.clone();
    for r in 0..out.rows() {
        for ((x, m), s) in out.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = *x * s + m;
        }
    }
    Ok(out)
}

/// Rows used to fit normalization statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Training rows of the scenario only.
    #[default]
    TrainOnly,
    /// Every row of the dataset.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub ood_class: usize,
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub id_test_indices: Vec<usize>,
    pub ood_test_indices: Vec<usize>,
}

/// Seed stream for the fold assignment of one held-out class.
const STREAM_FOLDS: u64 = 0x100;

/// `K × folds` scenarios ordered by `(ood_class, fold)`. The remaining
/// classes are split into stratified folds; each fold in turn is the ID
/// test set and the others form the training set.
pub fn make_loco_scenarios(dataset: &TabularDataset, folds: usize, seed: u64) -> Result<Vec<ScenarioSplit>> {
    if folds < 2 {
        return Err(Error::validation(format!("need at least 2 folds, got {folds}")));
    }
    let k_count = dataset.n_classes();
    if k_count < 2 {
        return Err(Error::validation("need at least 2 classes"));
    }
    let counts = dataset.class_counts();
    if let Some(k) = counts.iter().position(|&c| c < folds) {
        return Err(Error::validation(format!(
            "class {} ({:?}) has {} samples, fewer than {folds} folds",
            k, dataset.class_names[k], counts[k]
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k_count];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut out = Vec::with_capacity(k_count * folds);
    for ood in 0..k_count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FOLDS + ood as u64));
        let mut fold_of = vec![usize::MAX; dataset.n_samples()];
        // rotating the start keeps fold sizes balanced across classes
        let mut offset = 0;
        for (k, members) in by_class.iter().enumerate() {
            if k == ood {
                continue;
            }
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            for (pos, &i) in shuffled.iter().enumerate() {
                fold_of[i] = (pos + offset) % folds;
            }
            offset = (offset + shuffled.len()) % folds;
        }
        for fold in 0..folds {
            let mut split = ScenarioSplit {
                ood_class: ood,
                fold,
                train_indices: Vec::new(),
                id_test_indices: Vec::new(),
                ood_test_indices: by_class[ood].clone(),
            };
            for (i, &f) in fold_of.iter().enumerate() {
                if f == fold {
                    split.id_test_indices.push(i);
                } else if f != usize::MAX {
                    split.train_indices.push(i);
                }
            }
            out.push(split);
        }
    }
    Ok(out)
}

/// Maps an original class id to its index among the ID classes.
pub fn id_label(label: usize, ood_class: usize) -> Option<usize> {
    match label.cmp(&ood_class) {
        std::cmp::Ordering::Less => Some(label),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(label - 1),
    }
}

/// Normalized matrices and remapped labels for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub train: Matrix,
    pub train_labels: Vec<usize>,
    pub id_test: Matrix,
    pub id_test_labels: Vec<usize>,
    pub ood_test: Matrix,
    pub stats: NormalizationStats,
    pub n_id_classes: usize,
}

impl ScenarioData {
    pub fn build(dataset: &TabularDataset, split: &ScenarioSplit, mode: NormalizationMode) -> Result<Self> {
        let stats = match mode {
            NormalizationMode::TrainOnly => zscore_fit(&dataset.features, &split.train_indices)?,
            NormalizationMode::Full => {
                let all: Vec<usize> = (0..dataset.n_samples()).collect();
                zscore_fit(&dataset.features, &all)?
            }
        };
        let take = |idx: &[usize]| zscore_apply(&dataset.features.select_rows(idx), &stats);
        let remap = |idx: &[usize]| -> Vec<usize> {
            idx.iter()
                .map(|&i| id_label(dataset.labels[i], split.ood_class).expect("OOD row in ID split"))
                .collect()
        };
        Ok(Self {
            train: take(&split.train_indices)?,
            train_labels: remap(&split.train_indices),
            id_test: take(&split.id_test_indices)?,
            id_test_labels: remap(&split.id_test_indices),
            ood_test: take(&split.ood_test_indices)?,
            stats,
            n_id_classes: dataset.n_classes() - 1,
        })
    }
}
