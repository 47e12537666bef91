//! Core data types for the stainlab pipeline: image patches, stain matrices,
//! a synthetic Beer-Lambert patch generator, manifest persistence and the
//! on-disk patch store.
//!
//! Everything here is deterministic: generators are pure functions of
//! `(seed, config, index)` and manifests serialize with stable key order so
//! repeated runs produce byte-identical artifacts.

pub mod embed;
pub mod error;
pub mod io;
pub mod linalg;
pub mod manifest;
pub mod patch;
pub mod rng;
pub mod stain;
pub mod store;
pub mod synth;

pub use error::CoreError;
pub use manifest::{CurationPlan, Manifest, PatchEntry, TriadRecord, SCHEMA_VERSION};
pub use patch::{ImagePatch, Magnification, PatchOrigin};
pub use rng::Rng;
pub use stain::StainMatrix;
pub use store::PatchStore;
pub use synth::SyntheticCorpusConfig;

/// Convenient result alias for fallible core operations.
pub type Result<T> = std::result::Result<T, CoreError>;
