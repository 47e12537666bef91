//! Corpus curation: stage-1 deep-feature clustering with an exclude-list in
//! place of manual vetting, stage-2 mean-RGB clustering with
//! nearest-centroid representative selection, and triad enumeration.

pub mod error;
pub mod features;
pub mod kmeans;
pub mod plan;

pub use error::CurationError;
pub use features::{extract_features, FeatureVector};
pub use kmeans::{kmeans, ClusterAssignment};
pub use plan::{
    build_plan, enumerate_triads, mean_rgb, select_representatives, vet_clusters, CurationConfig,
};
pub use stainlab_core::embed::{ConvEmbedder, FeatureExtractor};
pub use stainlab_core::CurationPlan;

pub type Result<T> = std::result::Result<T, CurationError>;
