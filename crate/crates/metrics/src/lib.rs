//! Image-quality metrics used for pipeline evaluation.

pub mod frechet;
pub mod pearson;
pub mod psnr;
pub mod report;
pub mod ssim;

pub use frechet::{fid, frechet_distance, gaussian_stats, GaussianStats};
pub use pearson::{pearson, Pearson};
pub use psnr::psnr;
pub use report::{summarize, MetricSummary, TargetReport};
pub use ssim::ssim;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] stainlab_core::CoreError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
