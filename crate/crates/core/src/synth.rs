//! Synthetic Beer-Lambert histology patches.
//!
//! Concentration fields are sums of isotropic Gaussian bumps (nuclei- and
//! stroma-like blobs), pushed through `I_c = 10^-(M^T c)_c` with unit
//! incident intensity. Because the generating stain matrix and the exact
//! concentration fields are known, these patches serve as the ground-truth
//! oracle for stain estimation, deconvolution and normalization.

use crate::{CoreError, ImagePatch, Magnification, Result, Rng, StainMatrix};
use serde::{Deserialize, Serialize};

/// Configuration for a synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub n_patches: usize,
    pub side: usize,
    pub stain_matrix: StainMatrix,
    pub texture_seed: u64,
    /// Per-stain (min, max) of the patch-level concentration scale.
    pub concentration_range: [(f64, f64); 2],
    /// Expected Gaussian bumps per stain per 32x32 pixel area.
    pub blob_density: f64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            n_patches: 128,
            side: 64,
            stain_matrix: StainMatrix::he_reference(),
            texture_seed: 0,
            concentration_range: [(0.3, 1.1), (0.2, 0.9)],
            blob_density: 4.0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(CoreError::InvalidArgument("side must be positive".into()));
        }
        for (lo, hi) in &self.concentration_range {
            if *lo < 0.0 {
                return Err(CoreError::InvalidArgument(
                    "concentration range minimum must be >= 0".into(),
                ));
            }
            if hi < lo {
                return Err(CoreError::InvalidArgument(
                    "concentration range must have min <= max".into(),
                ));
            }
        }
        if self.blob_density < 0.0 {
            return Err(CoreError::InvalidArgument("blob density must be >= 0".into()));
        }
        Ok(())
    }
}

/// Beer-Lambert transmittance of one pixel: `10^-(M^T conc)` per channel,
/// clamped to [0, 1]. The scalar oracle behind the whole generator.
pub fn beer_lambert_pixel(matrix: &StainMatrix, conc: [f64; 2]) -> [f64; 3] {
    let mut rgb = [0.0f64; 3];
    for c in 0..3 {
        let od = matrix.row(0)[c] * conc[0] + matrix.row(1)[c] * conc[1];
        rgb[c] = 10f64.powf(-od).clamp(0.0, 1.0);
    }
    rgb
}

/// Renders a patch from explicit per-pixel concentrations (`side*side`
/// entries per stain). Used by oracle tests that need exact ground truth.
pub fn patch_from_concentrations(
    id: impl Into<String>,
    side: usize,
    matrix: &StainMatrix,
    conc: &[[f64; 2]],
) -> Result<ImagePatch> {
    if conc.len() != side * side {
        return Err(CoreError::InvalidArgument(format!(
            "expected {} concentration pairs, got {}",
            side * side,
            conc.len()
        )));
    }
    let mut pixels = Vec::with_capacity(side * side * 3);
    for c in conc {
        pixels.extend_from_slice(&beer_lambert_pixel(matrix, *c));
    }
    ImagePatch::new(id, side, Magnification::X20, pixels)
}

#[derive(Debug, Clone, Copy)]
struct Bump {
    cx: f64,
    cy: f64,
    amplitude: f64,
    sigma: f64,
}

/// The smooth nonnegative concentration fields for patch `index`, one
/// `side*side` field per stain. Pure function of `(texture_seed, index)`.
pub fn synth_concentrations(config: &SyntheticCorpusConfig, index: u64) -> Vec<[f64; 2]> {
    let side = config.side;
    let s = side as f64;
    let mut rng = Rng::from_seed_stream(config.texture_seed, index);

    let area_units = (s / 32.0) * (s / 32.0);
    let n_bumps = if config.blob_density > 0.0 {
        ((config.blob_density * area_units).round() as usize).max(1)
    } else {
        0
    };

    let mut bumps: [Vec<Bump>; 2] = [Vec::new(), Vec::new()];
    for stain in 0..2 {
        let (lo, hi) = config.concentration_range[stain];
        let scale = rng.range(lo, hi);
        for b in 0..n_bumps {
            // Each stain is biased toward its own half, with a full-strength
            // anchor bump at the far edtge, so every patch keeps a near-pure
            // region per stain; this is what makes stain estimation on the
            // synthetic corpus well-posed.
            let (x_lo, x_hi) = match (b, stain) {
                (0, 0) => (0.04, 0.14),
                (0, _) => (0.86, 0.96),
                (_, 0) => (0.0, 0.55),
                (_, _) => (0.45, 1.0),
            };
            let cx = rng.range(x_lo * s, x_hi * s);
            let cy = rng.range(0.0, s);
            let amplitude = if b == 0 {
                scale
            } else {
                scale * rng.range(0.6, 1.0)
            };
            let sigma = rng.range(0.05 * s, 0.09 * s);
            bumps[stain].push(Bump {
                cx,
                cy,
                amplitude,
                sigma,
            });
        }
    }

    let mut conc = vec![[0.0f64; 2]; side * side];
    for stain in 0..2 {
        for bump in &bumps[stain] {
            let inv_two_sigma2 = 1.0 / (2.0 * bump.sigma * bump.sigma);
            for y in 0..side {
                let dy = y as f64 - bump.cy;
                for x in 0..side {
                    let dx = x as f64 - bump.cx;
                    let v = bump.amplitude * (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
                    conc[y * side + x][stain] += v;
                }
            }
        }
    }
    conc
}

/// Deterministic synthetic patch `index` of the corpus described by `config`.
pub fn synth_patch(config: &SyntheticCorpusConfig, index: u64) -> Result<ImagePatch> {
    config.validate()?;
    let conc = synth_concentrations(config, index);
    patch_from_concentrations(
        format!("p{index:06}"),
        config.side,
        &config.stain_matrix,
        &conc,
    )
}
