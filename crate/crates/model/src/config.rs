use crate::{ModelError, Result};
use serde::{Deserialize, Serialize};

/// How the encoded source image enters the control branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceInjection {
    /// `h(p_s)` is added to the noised latent at the control input.
    Additive,
    /// `h(p_s)` is channel-concatenated with the noised latent.
    Concat,
}

/// Architecture hyperparameters of the toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Training patch side; must be a multiple of 32 (three stride-2 stages
    /// in the VAE, two more in the UNet).
    pub side: usize,
    pub latent_channels: usize,
    pub d_tau: usize,
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub attn_dim: usize,
    pub t_total: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub source_injection: SourceInjection,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            side: 32,
            latent_channels: 4,
            d_tau: 32,
            widths: [32, 64, 128],
            time_dim: 128,
            attn_dim: 32,
            t_total: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            source_injection: SourceInjection::Additive,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// VAE spatial downsample factor (three stride-2 stages).
    pub const DOWNSAMPLE: usize = 8;

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.side % 32 != 0 {
            return Err(ModelError::InvalidArgument(format!(
                "side must be a positive multiple of 32, got {}",
                self.side
            )));
        }
        if self.t_total == 0 {
            return Err(ModelError::InvalidArgument("t_total must be >= 1".into()));
        }
        Ok(())
    }

    pub fn latent_side(&self) -> usize {
        self.side / Self::DOWNSAMPLE
    }
}

/// Autoencoder pretraining settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub lr: f64,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            lr: 2e-3,
            kl_weight: 1e-6,
            epochs: 30,
            batch: 8,
            seed: 0,
        }
    }
}

/// Diffusion training settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Freezes the UNet decoder as well (the ablation setting).
    pub decoder_frozen: bool,
    pub seed: u64,
    /// Loss-log cadence in steps.
    pub log_every: usize,
    /// Validation-sample cadence in steps (0 disables).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-2,
            epochs: 3,
            batch: 8,
            decoder_frozen: false,
            seed: 0,
            log_every: 10,
            val_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(ModelError::InvalidArgument("lr must be positive".into()));
        }
        if self.batch == 0 {
            return Err(ModelError::InvalidArgument("batch must be >= 1".into()));
        }
        Ok(())
    }
}
