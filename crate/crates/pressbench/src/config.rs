//! Merged run configuration with content hashing.
//!
//! One JSON document drives every stage; the content hash changes iff any
//! semantic field changes, and unknown keys are rejected on parse.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{AugmentConfig, ExpertConfig};
use crate::dsp::MelConfig;
use crate::sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration error: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub episodes: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { episodes: 200 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub pretrain_examples_per_class: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub finetune_windows: usize,
    pub holdout_windows: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_batch: usize,
    pub threshold: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            pretrain_examples_per_class: 80,
            pretrain_epochs: 6,
            pretrain_lr: 3e-4,
            pretrain_batch: 16,
            finetune_windows: 500,
            holdout_windows: 2000,
            finetune_epochs: 10,
            finetune_lr: 1e-5,
            finetune_batch: 8,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub diffusion_steps: usize,
    pub denoiser_width: usize,
    pub timestep_embed_dim: usize,
    pub soft_sensor_latency_s: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            warmup_steps: 500,
            diffusion_steps: 50,
            denoiser_width: 256,
            timestep_embed_dim: 32,
            soft_sensor_latency_s: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub rollouts: usize,
    pub budget_s: f64,
    pub retract_margin_m: f64,
    pub w1_on_traces: bool,
    pub histogram_bin_n: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 40,
            budget_s: 10.0,
            retract_margin_m: 0.010,
            w1_on_traces: false,
            histogram_bin_n: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub mel: MelConfig,
    pub augment: AugmentConfig,
    pub expert: ExpertConfig,
    pub collect: CollectConfig,
    pub detector: DetectorConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |e: String| ConfigError::Invalid(e);
        self.sim.validate().map_err(|e| err(e.to_string()))?;
        self.mel.validate().map_err(|e| err(e.to_string()))?;
        self.expert.validate(&self.sim).map_err(|e| err(e.to_string()))?;
        if self.augment.crop_width > self.sim.render.width
            || self.augment.crop_height > self.sim.render.height
        {
            return Err(err("augment crop exceeds the rendered image".into()));
        }
        if self.policy.warmup_steps >= self.policy.steps {
            return Err(err(format!(
                "policy warmup_steps {} must be below steps {}",
                self.policy.warmup_steps, self.policy.steps
            )));
        }
        if self.policy.diffusion_steps == 0 {
            return Err(err("diffusion_steps must be positive".into()));
        }
        if self.eval.rollouts == 0 || self.eval.budget_s <= 0.0 {
            return Err(err("evaluation needs rollouts and a positive budget".into()));
        }
        if !(0.0..=1.0).contains(&self.detector.threshold) {
            return Err(err(format!(
                "detector threshold {} outside [0,1]",
                self.detector.threshold
            )));
        }
        Ok(())
    }

    /// Content digest over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            serde_json::from_str(json).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)?;
        Self::from_json(&raw)
    }
}
