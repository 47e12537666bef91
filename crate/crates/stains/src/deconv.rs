//! Color deconvolution: per-pixel least-squares solve of `od = M^T c` and
//! its Beer-Lambert inverse.

use crate::od::{od_norms, percentile, rgb_to_od, TISSUE_OD_THRESHOLD};
use crate::{Result, StainError};
use stainlab_core::synth::beer_lambert_pixel;
use stainlab_core::{ImagePatch, StainMatrix};

/// Per-pixel stain concentrations, interleaved `[pixel * 2 + stain]`,
/// clamped to be nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    side: usize,
    values: Vec<f64>,
}

impl ConcentrationMap {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn pair(&self, pixel: usize) -> [f64; 2] {
        [self.values[pixel * 2], self.values[pixel * 2 + 1]]
    }

    /// 99th-percentile concentration of each stain over tissue pixels (OD
    /// norm above the tissue threshold), or zero if the patch has none.
    pub fn percentile99(&self, od: &[f64]) -> [f64; 2] {
        let norms = od_norms(od);
        let mut per_stain: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (i, &n) in norms.iter().enumerate() {
            if n > TISSUE_OD_THRESHOLD {
                per_stain[0].push(self.values[i * 2]);
                per_stain[1].push(self.values[i * 2 + 1]);
            }
        }
        let mut out = [0.0; 2];
        for s in 0..2 {
            if !per_stain[s].is_empty() {
                out[s] = percentile(&per_stain[s], 99.0);
            }
        }
        out
    }
}

/// Solves `od = M^T c` per pixel in the least-squares sense and clamps
/// negative concentrations to zero.
pub fn deconvolve(patch: &ImagePatch, matrix: &StainMatrix) -> Result<ConcentrationMap> {
    let od = rgb_to_od(patch);
    deconvolve_od(&od, patch.side(), matrix)
}

pub fn deconvolve_od(od: &[f64], side: usize, matrix: &StainMatrix) -> Result<ConcentrationMap> {
    // Normal equations: (M M^T) c = M od with M the 2x3 row matrix.
    let r0 = matrix.row(0);
    let r1 = matrix.row(1);
    let a00: f64 = r0.iter().map(|v| v * v).sum();
    let a11: f64 = r1.iter().map(|v| v * v).sum();
    let a01: f64 = r0.iter().zip(&r1).map(|(x, y)| x * y).sum();
    let det = a00 * a11 - a01 * a01;
    if det < 1e-6 {
        return Err(StainError::Conditioning(format!(
            "stain vectors nearly collinear, normal-equation determinant {det:.3e}"
        )));
    }
    let inv = [[a11 / det, -a01 / det], [-a01 / det, a00 / det]];

    let mut values = Vec::with_capacity(side * side * 2);
    for px in od.chunks_exact(3) {
        let b0 = r0[0] * px[0] + r0[1] * px[1] + r0[2] * px[2];
        let b1 = r1[0] * px[0] + r1[1] * px[1] + r1[2] * px[2];
        let c0 = inv[0][0] * b0 + inv[0][1] * b1;
        let c1 = inv[1][0] * b0 + inv[1][1] * b1;
        values.push(c0.max(0.0));
        values.push(c1.max(0.0));
    }
    Ok(ConcentrationMap { side, values })
}

/// Beer-Lambert reconstruction `pixel = 10^-(M^T c)`, clamped to [0, 1].
pub fn reconstruct(
    conc: &ConcentrationMap,
    matrix: &StainMatrix,
    id: impl Into<String>,
) -> Result<ImagePatch> {
    let mut pixels = Vec::with_capacity(conc.side * conc.side * 3);
    for i in 0..conc.side * conc.side {
        pixels.extend_from_slice(&beer_lambert_pixel(matrix, conc.pair(i)));
    }
    Ok(ImagePatch::from_pixels_clamped(
        id,
        conc.side,
        stainlab_core::Magnification::X20,
        pixels,
    )?)
}
