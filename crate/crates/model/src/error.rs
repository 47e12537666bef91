use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failure: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] stainlab_core::CoreError),

    #[error(transparent)]
    Diffusion(#[from] stainlab_diffusion::DiffusionError),
}
