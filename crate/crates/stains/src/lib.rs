//! Classical stain-normalization baselines over the Beer-Lambert model:
//! Reinhard statistics matching, Ruifrok fixed-matrix deconvolution, Macenko
//! SVD-plane estimation and Vahadane sparse-NMF estimation.

pub mod deconv;
pub mod error;
pub mod macenko;
pub mod normalize;
pub mod od;
pub mod reinhard;
pub mod vahadane;

pub use deconv::{deconvolve, reconstruct, ConcentrationMap};
pub use error::StainError;
pub use macenko::estimate_macenko;
pub use normalize::{normalize_stain, StainEstimator};
pub use od::{od_norms, rgb_to_od, OD_CLAMP_EPSILON, TISSUE_OD_THRESHOLD};
pub use reinhard::normalize_reinhard;
pub use stainlab_core::StainMatrix;
pub use vahadane::{estimate_vahadane, vahadane_fit, VahadaneFit};

pub type Result<T> = std::result::Result<T, StainError>;
