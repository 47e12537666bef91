//! Whole-slide inference at desk scale: deterministic tile grids over a
//! tissue mask, any normalizer applied tile-by-tile, exact stitching, and a
//! seam-consistency report quantifying cross-tile agreement.

pub mod mask;
pub mod normalizers;
pub mod run;
pub mod slide;
pub mod tiles;

pub use mask::{tissue_mask, Mask};
pub use normalizers::{
    ConstantShiftNormalizer, DeconvNormalizer, IdentityNormalizer, ReinhardNormalizer,
    StainFuserNormalizer, TileNormalizer,
};
pub use run::{run_slide, seam_consistency, RunOutcome, SeamReport, ThroughputStats};
pub use slide::{synth_slide, PseudoSlide, SlideConfig};
pub use tiles::{plan_tiles, TileGrid};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WsiError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("normalizer `{normalizer}` failed on tile ({x}, {y}): {reason}")]
    TileFailure {
        normalizer: String,
        x: usize,
        y: usize,
        reason: String,
    },

    #[error(transparent)]
    Core(#[from] stainlab_core::CoreError),
}

pub type Result<T> = std::result::Result<T, WsiError>;
