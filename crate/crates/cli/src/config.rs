//! Run configuration file: one TOML table per section, every key optional.

use std::path::{Path, PathBuf};

use amot::perception::DetectorNoiseModel;
use amot::reward::{RewardTerms, RewardWeights};
use amot::rollout::EnvSetup;
use amot::simenv::WorldConfig;
use amot::trainer::{NetworkSizes, TrainerConfig, TrainingSetup};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: WorldConfig,
    pub trainer: TrainerConfig,
    pub reward: RewardSection,
    pub network: NetworkSizes,
    pub noise: DetectorNoiseModel,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub weights: RewardWeights,
    /// Terms to switch off, e.g. `team` or `all-individual`.
    pub ablate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub outdir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            outdir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn terms(&self) -> Result<RewardTerms> {
        let mut terms = RewardTerms::default();
        for name in &self.reward.ablate {
            terms.ablate(name)?;
        }
        Ok(terms)
    }

    pub fn env_setup(&self) -> Result<EnvSetup> {
        Ok(EnvSetup::new(
            self.env.clone(),
            self.network.max_slots,
            self.reward.weights.clone(),
            &self.terms()?,
            self.noise.clone(),
        )?)
    }

    pub fn training_setup(&self) -> Result<TrainingSetup> {
        Ok(TrainingSetup {
            env: self.env_setup()?,
            trainer: self.trainer.clone(),
            network: self.network.clone(),
            seed: self.run.seed,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
