use serde::{Deserialize, Serialize};

use super::SynthesisError;

pub const DEFAULT_MARKER: &str = "###";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    /// One backend call per conversation.
    #[default]
    WholeConversation,
    /// One backend call per turn.
    TurnByTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub marker: String,
    pub seed: u64,
    pub rewrite_temperature: f64,
    /// Upper bound on rendered turns, recommendation included.
    pub max_turns: usize,
    pub rewrite_mode: RewriteMode,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            marker: DEFAULT_MARKER.to_string(),
            seed: 0,
            rewrite_temperature: 0.7,
            max_turns: 64,
            rewrite_mode: RewriteMode::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.marker.trim().is_empty() {
            return Err(SynthesisError::InvalidConfig("marker must be non-empty".into()));
        }
        if self.max_turns < 3 {
            return Err(SynthesisError::InvalidConfig("max_turns must allow one exchange and a recommendation".into()));
        }
        Ok(())
    }
}

/// Fine-tuning hyperparameters, emitted for an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub num_train_epochs: u32,
    pub learning_rate: f64,
    pub block_size: u32,
    pub per_device_batch_size: u32,
    pub use_lora: bool,
    pub lora_r: u32,
    pub precision: String,
    pub dataloader_num_workers: u32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            num_train_epochs: 2,
            learning_rate: 2e-5,
            block_size: 128,
            per_device_batch_size: 6,
            use_lora: true,
            lora_r: 8,
            precision: "bf16".to_string(),
            dataloader_num_workers: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingOverrides {
    pub num_train_epochs: Option<u32>,
    pub learning_rate: Option<f64>,
    pub block_size: Option<u32>,
    pub per_device_batch_size: Option<u32>,
    pub use_lora: Option<bool>,
    pub lora_r: Option<u32>,
    pub precision: Option<String>,
    pub dataloader_num_workers: Option<u32>,
}

const PRECISIONS: [&str; 3] = ["bf16", "fp16", "fp32"];

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |name: &'static str| Err(SynthesisError::InvalidHyperparameter(name));
        if self.num_train_epochs == 0 {
            return bad("num_train_epochs");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate");
        }
        if self.block_size == 0 {
            return bad("block_size");
        }
        if self.per_device_batch_size == 0 {
            return bad("per_device_batch_size");
        }
        if self.lora_r == 0 {
            return bad("lora_r");
        }
        if !PRECISIONS.contains(&self.precision.as_str()) {
            return bad("precision");
        }
        if self.dataloader_num_workers == 0 {
            return bad("dataloader_num_workers");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

/// Applies `overrides` on top of the defaults and renders the config file.
pub fn emit_training_config(overrides: &TrainingOverrides) -> Result<(TrainingConfig, String), SynthesisError> {
    let d = TrainingConfig::default();
    let cfg = TrainingConfig {
        num_train_epochs: overrides.num_train_epochs.unwrap_or(d.num_train_epochs),
        learning_rate: overrides.learning_rate.unwrap_or(d.learning_rate),
        block_size: overrides.block_size.unwrap_or(d.block_size),
        per_device_batch_size: overrides.per_device_batch_size.unwrap_or(d.per_device_batch_size),
        use_lora: overrides.use_lora.unwrap_or(d.use_lora),
        lora_r: overrides.lora_r.unwrap_or(d.lora_r),
        precision: overrides.precision.clone().unwrap_or(d.precision),
        dataloader_num_workers: overrides.dataloader_num_workers.unwrap_or(d.dataloader_num_workers),
    };
    cfg.validate()?;
    let text = cfg.to_toml();
    Ok((cfg, text))
}
