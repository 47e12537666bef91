use thiserror::Error;

#[derive(Debug, Error)]
pub enum StainError {
    #[error("not enough tissue pixels for estimation: found {found}, need {required}")]
    InsufficientTissue { found: usize, required: usize },

    #[error("degenerate optical-density cloud: {0}")]
    Degenerate(String),

    #[error("ill-conditioned stain matrix: {0}")]
    Conditioning(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error(transparent)]
    Core(#[from] stainlab_core::CoreError),
}
