//! TOML run configuration with `[model]`, `[margins]`, `[train]` and
//! `[features]` sections. Every key is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::negation::Margins;
use crate::train::{TrainConfig, ValidationMetric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Fused embedding dimension.
    pub d: usize,
    pub heads: usize,
    /// Seed of parameter initialization.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { d: 16, heads: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub validation_metric: ValidationMetric,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            clip_norm: t.clip_norm,
            seed: t.seed,
            validation_metric: t.validation_metric,
        }
    }
}

/// Feature-space subsets; empty means every space in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub video: Vec<String>,
    pub text: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub margins: Margins,
    pub train: TrainSection,
    pub features: FeaturesSection,
}

impl Config {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.d == 0 || self.model.heads == 0 {
            return Err(Error::Config("model.d and model.heads must be ≥ 1".into()));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            clip_norm: t.clip_norm,
            seed: t.seed,
            margins: self.margins,
            validation_metric: t.validation_metric,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
