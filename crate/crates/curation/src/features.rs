use crate::{CurationError, Result};
use stainlab_core::embed::FeatureExtractor;
use stainlab_core::ImagePatch;

/// Deep feature vector of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub patch_id: String,
    pub values: Vec<f64>,
}

/// One feature vector per patch, in input order. Deterministic for a fixed
/// extractor; callers may shard this over workers because the result depends
/// only on the per-patch inputs.
pub fn extract_features(
    patches: &[ImagePatch],
    extractor: &dyn FeatureExtractor,
) -> Result<Vec<FeatureVector>> {
    if patches.is_empty() {
        return Err(CurationError::InvalidArgument(
            "cannot extract features from an empty patch list".into(),
        ));
    }
    patches
        .iter()
        .map(|p| {
            let values = extractor.extract(p);
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CurationError::InvalidArgument(format!(
                    "non-finite feature for patch {}",
                    p.id
                )));
            }
            Ok(FeatureVector {
                patch_id: p.id.clone(),
                values,
            })
        })
        .collect()
}
