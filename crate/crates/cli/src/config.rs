//! Flat JSON experiment configuration with `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use mcdd_core::{Architecture, LabelColumn, Method, NormalizationMode, TrainConfig, WeightInit};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// `last`, a zero-based index, or a header name.
    pub label_column: String,
    pub has_header: bool,
    pub method: Method,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub weight_init: WeightInit,
    pub nu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sphere_update_every: usize,
    pub folds: usize,
    pub seed: u64,
    pub normalization: NormalizationMode,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        let train = TrainConfig::default();
        Self {
            dataset: PathBuf::new(),
            label_column: "last".into(),
            has_header: true,
            method: Method::DeepMcdd,
            hidden: arch.hidden,
            latent_dim: arch.latent_dim,
            weight_init: arch.weight_init,
            nu: train.nu,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            sphere_update_every: train.sphere_update_every,
            folds: 5,
            seed: train.seed,
            normalization: NormalizationMode::TrainOnly,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then the file (if any), then each override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let parsed: Value = serde_json::from_str(&text).map_err(|source| CliError::Json {
                    path: p.to_path_buf(),
                    source,
                })?;
                // reject unknown keys and bad types before merging
                serde_json::from_value::<ExperimentConfig>(parsed.clone())
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let mut base = serde_json::to_value(ExperimentConfig::default()).expect("serializable");
                merge(&mut base, parsed);
                base
            }
            None => serde_json::to_value(ExperimentConfig::default()).expect("serializable"),
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.dataset.as_os_str().is_empty() {
            return fail("dataset path is required".into());
        }
        if self.hidden.contains(&0) || self.latent_dim == 0 {
            return fail("layer widths must be positive".into());
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        self.label_column()?;
        self.train_config().validate()?;
        if self.method == Method::SoftMcdd && self.nu > 1.0 {
            return fail(format!("soft-mcdd needs nu in (0, 1], got {}", self.nu));
        }
        Ok(())
    }

    pub fn label_column(&self) -> CliResult<LabelColumn> {
        Ok(self.label_column.parse()?)
    }

    pub fn arch(&self) -> Architecture {
        Architecture {
            weight_init: self.weight_init,
            ..Architecture::new(self.hidden.clone(), self.latent_dim)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            nu: self.nu,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            sphere_update_every: self.sphere_update_every,
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    if let (Value::Object(b), Value::Object(p)) = (base, patch) {
        for (k, v) in p {
            b.insert(k, v);
        }
    }
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
fn apply_override(config: &mut Value, item: &str) -> CliResult<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
    let map = config.as_object_mut().expect("config is an object");
    if !map.contains_key(key) {
        return Err(CliError::Config(format!("unknown configuration key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    map.insert(key.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_match_the_documented_values() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.arch().layer_dims(128), vec![128, 128, 128, 128]);
        assert_eq!((cfg.nu, cfg.epochs, cfg.learning_rate, cfg.folds), (1.0, 100, 0.01, 5));
    }

    #[test]
    fn overrides_win_over_file() {
        let f = file(r#"{"dataset": "a.csv", "nu": 0.5, "method": "soft-mcdd"}"#);
        let cfg = ExperimentConfig::load(
            Some(f.path()),
            &["nu=0.25".into(), "hidden=[8,8]".into(), "label_column=class".into()],
        )
        .unwrap();
        assert_eq!(cfg.nu, 0.25);
        assert_eq!(cfg.method, Method::SoftMcdd);
        assert_eq!(cfg.hidden, vec![8, 8]);
        assert_eq!(cfg.label_column().unwrap(), LabelColumn::Name("class".into()));
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.arch().weight_init, WeightInit::Uniform);
        let he = ExperimentConfig::load(None, &["dataset=a.csv".into(), "weight_init=he".into()]).unwrap();
        assert_eq!(he.arch().weight_init, WeightInit::He);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = file(r#"{"dataset": "a.csv", "learning_rat": 0.1}"#);
        assert!(matches!(
            ExperimentConfig::load(Some(f.path()), &[]),
            Err(CliError::Config(_))
        ));
        let err = ExperimentConfig::load(None, &["dataset=a.csv".into(), "bogus=1".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in ["nu=0", "folds=1", "epochs=0", "latent_dim=0", "method=svm"] {
            let err = ExperimentConfig::load(None, &["dataset=a.csv".into(), bad.into()]).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{bad}");
        }
        assert!(ExperimentConfig::load(None, &[]).is_err());
        let soft = ["dataset=a.csv".into(), "method=soft-mcdd".into(), "nu=2".into()];
        assert!(ExperimentConfig::load(None, &soft).is_err());
    }
}
