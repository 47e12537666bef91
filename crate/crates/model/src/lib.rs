//! The stain-transfer diffusion model: a frozen toy VAE, a time-conditional
//! UNet with target-image cross-attention, and a zero-convolution control
//! branch carrying the source image. Training follows the noise-prediction
//! objective with a configurable freeze policy.

pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod infer;
pub mod train;
pub mod unet;
pub mod vae;

pub use bundle::{ConditionEmbedding, DenoiserBundle};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ModelConfig, SourceInjection, TrainConfig, VaeTrainConfig};
pub use error::ModelError;
pub use infer::infer;
pub use train::{train, train_step, LossRecord, TrainReport, Trainer};
pub use vae::{train_autoencoder, Autoencoder};

pub type Result<T> = std::result::Result<T, ModelError>;
