//! Reinhard color normalization: per-channel mean/std matching in CIELAB.

use crate::Result;
use stainlab_core::ImagePatch;

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

// D65 reference white.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0]);
    let g = srgb_to_linear(rgb[1]);
    let b = srgb_to_linear(rgb[2]);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let x = WHITE[0] * lab_f_inv(fx);
    let y = WHITE[1] * lab_f_inv(fy);
    let z = WHITE[2] * lab_f_inv(fz);
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [
        linear_to_srgb(r).clamp(0.0, 1.0),
        linear_to_srgb(g).clamp(0.0, 1.0),
        linear_to_srgb(b).clamp(0.0, 1.0),
    ]
}

fn channel_stats(lab: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let n = lab.len() as f64;
    let mut mean = [0.0f64; 3];
    for px in lab {
        for c in 0..3 {
            mean[c] += px[c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = [0.0f64; 3];
    for px in lab {
        for c in 0..3 {
            let d = px[c] - mean[c];
            std[c] += d * d;
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
    }
    (mean, std)
}

/// Rescales the source's per-channel CIELAB statistics to the target's.
/// Channels with (near-)zero standard deviation are treated as std 1 to
/// avoid division blowups, so a constant source maps to the target mean.
pub fn normalize_reinhard(source: &ImagePatch, target: &ImagePatch) -> Result<ImagePatch> {
    const STD_FLOOR: f64 = 1e-9;
    let src_lab: Vec<[f64; 3]> = source
        .pixels()
        .chunks_exact(3)
        .map(|p| rgb_to_lab([p[0], p[1], p[2]]))
        .collect();
    let tgt_lab: Vec<[f64; 3]> = target
        .pixels()
        .chunks_exact(3)
        .map(|p| rgb_to_lab([p[0], p[1], p[2]]))
        .collect();
    let (mu_s, sd_s) = channel_stats(&src_lab);
    let (mu_t, sd_t) = channel_stats(&tgt_lab);
    let sd_s = sd_s.map(|s| if s < STD_FLOOR { 1.0 } else { s });
    let sd_t = sd_t.map(|s| if s < STD_FLOOR { 1.0 } else { s });

    let mut pixels = Vec::with_capacity(source.pixels().len());
    for px in &src_lab {
        let mut lab = [0.0f64; 3];
        for c in 0..3 {
            lab[c] = (px[c] - mu_s[c]) / sd_s[c] * sd_t[c] + mu_t[c];
        }
        pixels.extend_from_slice(&lab_to_rgb(lab));
    }
    Ok(ImagePatch::from_pixels_clamped(
        format!("{}-reinhard-{}", source.id, target.id),
        source.side(),
        source.magnification,
        pixels,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::{Magnification, SyntheticCorpusConfig};

    #[test]
    fn identical_stats_is_identity() {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        let p = synth_patch(&config, 0).unwrap();
        let out = normalize_reinhard(&p, &p).unwrap();
        let max_err = p
            .pixels()
            .iter()
            .zip(out.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "max err {max_err}");
    }

    #[test]
    fn constant_source_maps_to_target_mean() {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        let target = synth_patch(&config, 1).unwrap();
        let source =
            ImagePatch::constant("c", 32, Magnification::X20, [0.5, 0.5, 0.5]).unwrap();
        let out = normalize_reinhard(&source, &target).unwrap();

        // Every output pixel equals the target Lab mean pushed back to RGB.
        let first = out.rgb(0, 0);
        for y in 0..32 {
            for x in 0..32 {
                let px = out.rgb(x, y);
                for c in 0..3 {
                    assert!((px[c] - first[c]).abs() < 1e-12);
                }
            }
        }
        let tgt_lab: Vec<[f64; 3]> = target
            .pixels()
            .chunks_exact(3)
            .map(|p| rgb_to_lab([p[0], p[1], p[2]]))
            .collect();
        let (mu_t, _) = channel_stats(&tgt_lab);
        let expected = lab_to_rgb(mu_t);
        for c in 0..3 {
            assert!((first[c] - expected[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn lab_roundtrip_error_small() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        let p = synth_patch(&config, 2).unwrap();
        for px in p.pixels().chunks_exact(3) {
            let rgb = [px[0], px[1], px[2]];
            let back = lab_to_rgb(rgb_to_lab(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-4, "{rgb:?} -> {back:?}");
            }
        }
    }
}
