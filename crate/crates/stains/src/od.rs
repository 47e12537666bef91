//! RGB <-> optical density. Pixels are transmittance fractions in [0, 1]
//! (unit incident intensity), so `od = -log10(max(pixel, eps))`.

use stainlab_core::ImagePatch;

/// Transmittance floor before the log; a zero pixel maps to od = 6 exactly.
pub const OD_CLAMP_EPSILON: f64 = 1e-6;

/// Pixels with an OD vector norm above this count as tissue.
pub const TISSUE_OD_THRESHOLD: f64 = 0.15;

/// Per-pixel optical density, interleaved like the source pixels.
pub fn rgb_to_od(patch: &ImagePatch) -> Vec<f64> {
    patch
        .pixels()
        .iter()
        .map(|&v| -v.max(OD_CLAMP_EPSILON).log10())
        .collect()
}

/// Euclidean norm of each pixel's OD triple.
pub fn od_norms(od: &[f64]) -> Vec<f64> {
    od.chunks_exact(3)
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .collect()
}

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
