//! JSON run configuration.

use std::path::Path;

use mmsurv_core::{EncoderConfig, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::pipeline::TrainingConfig;
use crate::split::SplitFractions;
use crate::synthetic::SyntheticConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub split: SplitFractions,
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    pub training: TrainingConfig,
    pub synthetic: SyntheticConfig,
    /// Bootstrap resamples per reported interval.
    pub bootstrap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            split: SplitFractions::default(),
            model: ModelConfig::default(),
            encoder: EncoderConfig::default(),
            training: TrainingConfig::default(),
            synthetic: SyntheticConfig::default(),
            bootstrap: 200,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.model.validate()?;
        self.encoder.validate()?;
        self.training.validate()?;
        if self.bootstrap == 0 {
            return Err(HarnessError::Config("bootstrap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_json(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }
}
