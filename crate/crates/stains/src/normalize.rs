//! Stain-matrix-based normalization: deconvolve the source, rescale each
//! stain's concentrations to the target's 99th percentile, reconstruct in
//! the target's stain basis.

use crate::deconv::{deconvolve, reconstruct};
use crate::macenko::estimate_macenko;
use crate::od::rgb_to_od;
use crate::vahadane::estimate_vahadane;
use crate::Result;
use stainlab_core::{ImagePatch, StainMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StainEstimator {
    /// The published fixed H&E matrix, regardless of input.
    RuifrokFixed,
    Macenko,
    Vahadane,
}

impl StainEstimator {
    /// Stain matrix plus concentration percentiles for one patch.
    pub fn estimate(&self, patch: &ImagePatch) -> Result<StainMatrix> {
        match self {
            StainEstimator::RuifrokFixed => {
                let matrix = StainMatrix::he_reference();
                let od = rgb_to_od(patch);
                let conc = deconvolve(patch, &matrix)?;
                Ok(matrix.with_max_concentrations(conc.percentile99(&od))?)
            }
            StainEstimator::Macenko => estimate_macenko(patch, 1.0, 0.15),
            StainEstimator::Vahadane => estimate_vahadane(patch, 0.1, 100),
        }
    }
}

pub fn normalize_stain(
    source: &ImagePatch,
    target: &ImagePatch,
    estimator: StainEstimator,
) -> Result<ImagePatch> {
    let m_source = estimator.estimate(source)?;
    let m_target = estimator.estimate(target)?;
    normalize_with_matrices(source, &m_source, &m_target)
}

/// Normalization core once both matrices are known (lets callers reuse a
/// target estimate across a whole slide).
pub fn normalize_with_matrices(
    source: &ImagePatch,
    m_source: &StainMatrix,
    m_target: &StainMatrix,
) -> Result<ImagePatch> {
    let mut conc = deconvolve(source, m_source)?;
    let src_max = m_source.max_concentrations();
    let tgt_max = m_target.max_concentrations();
    let mut scale = [1.0f64; 2];
    for s in 0..2 {
        if src_max[s] > 1e-8 {
            scale[s] = tgt_max[s] / src_max[s];
        }
    }
    for pair in conc.values_mut().chunks_exact_mut(2) {
        pair[0] *= scale[0];
        pair[1] *= scale[1];
    }
    reconstruct(&conc, m_target, format!("{}-norm-{}", source.id, target_tag(m_target)))
}

fn target_tag(m: &StainMatrix) -> String {
    // Short fingerprint of the target basis for output ids.
    let v = m.vectors();
    format!(
        "{:02x}{:02x}{:02x}",
        (v[0][0] * 255.0) as u8,
        (v[0][1] * 255.0) as u8,
        (v[1][1] * 255.0) as u8
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::{Magnification, SyntheticCorpusConfig};

    fn mean_abs_diff(a: &ImagePatch, b: &ImagePatch) -> f64 {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.pixels().len() as f64
    }

    #[test]
    fn self_normalization_is_near_identity() {
        let config = SyntheticCorpusConfig {
            side: 64,
            ..Default::default()
        };
        let p = synth_patch(&config, 0).unwrap();
        let out = normalize_stain(&p, &p, StainEstimator::Macenko).unwrap();
        let mad = mean_abs_diff(&p, &out);
        assert!(mad < 0.02, "mean abs diff {mad}");
    }

    #[test]
    fn ruifrok_uses_fixed_matrix() {
        let config = SyntheticCorpusConfig {
            side: 64,
            ..Default::default()
        };
        let a = synth_patch(&config, 0).unwrap();
        let b = synth_patch(&config, 1).unwrap();
        let ma = StainEstimator::RuifrokFixed.estimate(&a).unwrap();
        let mb = StainEstimator::RuifrokFixed.estimate(&b).unwrap();
        assert_eq!(ma.vectors(), mb.vectors());
        assert_eq!(ma.vectors(), StainMatrix::he_reference().vectors());
    }

    #[test]
    fn white_source_stays_white() {
        let config = SyntheticCorpusConfig {
            side: 64,
            ..Default::default()
        };
        let target = synth_patch(&config, 1).unwrap();
        let white = ImagePatch::constant("w", 64, Magnification::X20, [1.0, 1.0, 1.0]).unwrap();
        let out = normalize_stain(&white, &target, StainEstimator::RuifrokFixed).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn normalization_is_idempotent_within_tolerance() {
        let config = SyntheticCorpusConfig {
            side: 64,
            ..Default::default()
        };
        let source = synth_patch(&config, 2).unwrap();
        let target = synth_patch(&config, 3).unwrap();
        let once = normalize_stain(&source, &target, StainEstimator::Macenko).unwrap();
        let twice = normalize_stain(&once, &target, StainEstimator::Macenko).unwrap();
        let mad = mean_abs_diff(&once, &twice);
        assert!(mad < 0.01, "second normalization moved pixels by {mad}");
    }
}
