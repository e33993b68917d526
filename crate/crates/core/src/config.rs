//! Engine configuration, read from a JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::MatchConfig;
use crate::reward::RewardWeights;
use crate::simenv::{DistillConfig, WorldConfig};

pub const CONFIG_ENV: &str = "GSRM_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: u64,
    pub group_size: usize,
    pub lr: f64,
    pub checkpoint_every: u64,
    pub sft_strength: f64,
    pub eval_problems: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            episodes: d.episodes,
            group_size: d.group_size,
            lr: d.lr,
            checkpoint_every: d.checkpoint_every,
            sft_strength: d.sft_strength,
            eval_problems: d.eval_problems,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: 8080 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub weights: RewardWeights,
    #[serde(rename = "match")]
    pub match_cfg: MatchConfig,
    pub world: WorldConfig,
    pub training: TrainingConfig,
    pub service: ServiceConfig,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            match_cfg: MatchConfig::default(),
            world: WorldConfig::default(),
            training: TrainingConfig::default(),
            service: ServiceConfig::default(),
            seed: 42,
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigFileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_owned(), source })?;
        Self::from_json(&text)
    }

    /// Reads `explicit` if given, else the file named by `GSRM_CONFIG`, else
    /// returns the defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigFileError> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            episodes: self.training.episodes,
            group_size: self.training.group_size,
            weights: self.weights,
            match_cfg: self.match_cfg.clone(),
            lr: self.training.lr,
            seed: self.seed,
            checkpoint_every: self.training.checkpoint_every,
            sft_strength: self.training.sft_strength,
            eval_problems: self.training.eval_problems,
        }
    }
}
