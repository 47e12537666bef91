//! DDPM mathematical core: schedules, the forward noising process, ancestral
//! reverse steps with fixed variance, a step-subsampled sampler, and the
//! scaled-dot-product cross-attention reference implementation.

pub mod attention;
pub mod process;
pub mod sampler;
pub mod schedule;

pub use attention::{cross_attention, AttentionWeights};
pub use process::{diffusion_loss, forward_marginal, forward_step, reverse_step, reverse_step_between};
pub use sampler::{sample, subsample_timesteps, Denoiser, DEFAULT_SAMPLE_STEPS};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;
