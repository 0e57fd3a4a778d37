//! Versioned JSON checkpoints. Floats are written with shortest round-trip
//! formatting, so loading reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::model::TrainedModel;
use crate::train::{Architecture, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub input_dim: usize,
    pub arch: Architecture,
    pub train_config: TrainConfig,
    pub seed: u64,
    /// Statistics to apply to raw features before scoring.
    pub normalization: Option<NormalizationStats>,
    pub class_names: Vec<String>,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(
        model: TrainedModel,
        arch: Architecture,
        train_config: TrainConfig,
        normalization: Option<NormalizationStats>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ckpt = Self {
            version: CHECKPOINT_VERSION,
            input_dim: model.mlp().input_dim(),
            seed: train_config.seed,
            arch,
            train_config,
            normalization,
            class_names,
            model,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        let mlp = self.model.mlp();
        mlp.validate()?;
        if mlp.dims() != self.arch.layer_dims(self.input_dim) {
            return Err(Error::validation(format!(
                "network dims {:?} do not match architecture {:?}",
                mlp.dims(),
                self.arch.layer_dims(self.input_dim)
            )));
        }
        if let Some(stats) = &self.normalization {
            if stats.mean.len() != self.input_dim || stats.std.len() != self.input_dim {
                return Err(Error::validation("normalization width does not match input"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(Error::validation(format!(
                    "unsupported checkpoint version {v} (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => return Err(Error::validation("checkpoint has no version field")),
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
