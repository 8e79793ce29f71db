//! The experiment configuration document: one TOML file with sections for
//! generation, model, training and attack. Unknown keys are rejected, every
//! field defaults to the reference table values, and a parsed config
//! round-trips to its canonical serialization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackConfig;
use crate::datagen::{SatGenConfig, TspGenConfig};
use crate::surrogate::{SurrogateRole, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Surrogate architecture settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub role: SurrogateRole,
    pub embed_dim: usize,
    pub rounds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            role: SurrogateRole::Sat,
            embed_dim: crate::surrogate::DEFAULT_EMBED_DIM,
            rounds: crate::surrogate::DEFAULT_ROUNDS,
        }
    }
}

/// Top-level experiment configuration. The three attack sections carry the
/// per-model default tables (SAT edits; decision-TSP nodes; route-TSP nodes).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sat_gen: SatGenConfig,
    pub tsp_gen: TspGenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub attack_dtsp: AttackConfig,
    pub attack_convtsp: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sat_gen: SatGenConfig::default(),
            tsp_gen: TspGenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            attack_dtsp: AttackConfig::dtsp(),
            attack_convtsp: AttackConfig::convtsp(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sat_gen.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.tsp_gen.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        self.attack.validate().map_err(ConfigError::Invalid)?;
        self.attack_dtsp.validate().map_err(ConfigError::Invalid)?;
        self.attack_convtsp.validate().map_err(ConfigError::Invalid)?;
        if self.model.embed_dim == 0 || self.model.rounds == 0 {
            return Err(ConfigError::Invalid("model dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Canonical serialization (field order fixed by the struct).
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn read_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}
