//! Run configuration: one TOML table per pipeline stage, overridable by flags.

use std::fs;
use std::path::{Path, PathBuf};

use aae_core::dataset::SynthConfig;
use aae_core::model::ModelConfig;
use aae_core::preprocess::PreprocessConfig;
use aae_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Images written by `gen-data`.
    pub count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, count: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    /// Held-out fold for a single (non `--cv`) run.
    pub fold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { folds: 5, fold: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed. Copied into the synthetic, model and training seeds and
    /// used for the fold split.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut config = Self {
            seed: 42,
            out: None,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        config.set_seed(42);
        config
    }
}

impl RunConfig {
    /// Reads a TOML file, or a JSON run echo (`run.json` or a bare config object).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("{}: {e}", path.display()));
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_json::from_value(value).map_err(|e| bad(&e))?
        } else {
            toml::from_str(&text).map_err(|e| bad(&e))?
        };
        let seed = config.seed;
        config.set_seed(seed);
        Ok(config)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.synth.validate().map_err(|e| invalid(&e))?;
        self.preprocess.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        if self.model.input_side != self.preprocess.side {
            return Err(CliError::Config(format!(
                "model.input_side ({}) must equal preprocess.side ({})",
                self.model.input_side, self.preprocess.side
            )));
        }
        if self.eval.folds < 2 {
            return Err(CliError::Config(format!("eval.folds must be at least 2, got {}", self.eval.folds)));
        }
        if self.eval.fold >= self.eval.folds {
            return Err(CliError::Config(format!(
                "eval.fold {} is out of range for {} folds",
                self.eval.fold, self.eval.folds
            )));
        }
        Ok(())
    }

    /// Everything needed to reproduce a run; the output directory is left out.
    pub fn echo(&self) -> serde_json::Value {
        let mut copy = self.clone();
        copy.out = None;
        serde_json::to_value(copy).expect("config serializes")
    }
}
