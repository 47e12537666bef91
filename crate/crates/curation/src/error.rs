use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corpus too small: need {required} patches after vetting, have {available}")]
    Capacity { required: usize, available: usize },

    #[error(transparent)]
    Core(#[from] stainlab_core::CoreError),
}
