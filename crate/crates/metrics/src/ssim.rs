//! Structural similarity with the standard 11x11 Gaussian window
//! (sigma 1.5), K1 = 0.01, K2 = 0.03, peak 1, computed per channel over the
//! valid window positions and averaged.

use crate::{MetricsError, Result};
use stainlab_core::ImagePatch;

pub const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode filter of an s x s plane -> (s-10) x (s-10).
fn filter_valid(plane: &[f64], side: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let out_side = side - WINDOW + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; side * out_side];
    for y in 0..side {
        for x in 0..out_side {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * plane[y * side + x + k];
            }
            tmp[y * out_side + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; out_side * out_side];
    for y in 0..out_side {
        for x in 0..out_side {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * tmp[(y + k) * out_side + x];
            }
            out[y * out_side + x] = acc;
        }
    }
    out
}

fn channel_plane(patch: &ImagePatch, channel: usize) -> Vec<f64> {
    patch
        .pixels()
        .chunks_exact(3)
        .map(|px| px[channel])
        .collect()
}

/// Mean local SSIM in [-1, 1].
pub fn ssim(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    if a.side() != b.side() {
        return Err(MetricsError::InvalidArgument(format!(
            "shape mismatch: {} vs {}",
            a.side(),
            b.side()
        )));
    }
    if a.side() < WINDOW {
        return Err(MetricsError::InvalidArgument(format!(
            "side must be >= {WINDOW} for the SSIM window, got {}",
            a.side()
        )));
    }
    let kernel = gaussian_kernel();
    let side = a.side();
    let c1 = K1 * K1;
    let c2 = K2 * K2;

    let mut total = 0.0;
    for channel in 0..3 {
        let x = channel_plane(a, channel);
        let y = channel_plane(b, channel);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

        let mu_x = filter_valid(&x, side, &kernel);
        let mu_y = filter_valid(&y, side, &kernel);
        let e_xx = filter_valid(&xx, side, &kernel);
        let e_yy = filter_valid(&yy, side, &kernel);
        let e_xy = filter_valid(&xy, side, &kernel);

        let mut acc = 0.0;
        for i in 0..mu_x.len() {
            let mx = mu_x[i];
            let my = mu_y[i];
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
            acc += s;
        }
        total += acc / mu_x.len() as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::{Magnification, SyntheticCorpusConfig};

    #[test]
    fn identical_images_score_one() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        let p = synth_patch(&config, 0).unwrap();
        let s = ssim(&p, &p).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn inverted_binary_image_is_negative() {
        let side = 16;
        let mut pixels = vec![0.0; side * side * 3];
        for y in 0..side {
            for x in 0..side {
                let v = if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { 0.0 };
                for c in 0..3 {
                    pixels[(y * side + x) * 3 + c] = v;
                }
            }
        }
        let a = ImagePatch::new("a", side, Magnification::X20, pixels.clone()).unwrap();
        let inverted: Vec<f64> = pixels.iter().map(|v| 1.0 - v).collect();
        let b = ImagePatch::new("b", side, Magnification::X20, inverted).unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn small_side_is_error() {
        let p = ImagePatch::constant("p", 8, Magnification::X20, [0.5; 3]).unwrap();
        assert!(ssim(&p, &p).is_err());
    }

    #[test]
    fn matches_direct_sliding_window_oracle() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        let a = synth_patch(&config, 4).unwrap();
        let b = synth_patch(&config, 5).unwrap();
        let fast = ssim(&a, &b).unwrap();

        // Naive O(n * 121) oracle.
        let kernel = gaussian_kernel();
        let side = 16;
        let out_side = side - WINDOW + 1;
        let c1 = K1 * K1;
        let c2 = K2 * K2;
        let mut total = 0.0;
        for channel in 0..3 {
            let x = channel_plane(&a, channel);
            let y = channel_plane(&b, channel);
            let mut acc = 0.0;
            for wy in 0..out_side {
                for wx in 0..out_side {
                    let (mut mx, mut my) = (0.0, 0.0);
                    let (mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0);
                    for ky in 0..WINDOW {
                        for kx in 0..WINDOW {
                            let w = kernel[ky] * kernel[kx];
                            let xv = x[(wy + ky) * side + wx + kx];
                            let yv = y[(wy + ky) * side + wx + kx];
                            mx += w * xv;
                            my += w * yv;
                            exx += w * xv * xv;
                            eyy += w * yv * yv;
                            exy += w * xv * yv;
                        }
                    }
                    let var_x = exx - mx * mx;
                    let var_y = eyy - my * my;
                    let cov = exy - mx * my;
                    acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
                }
            }
            total += acc / (out_side * out_side) as f64;
        }
        let oracle = total / 3.0;
        assert!((fast - oracle).abs() < 1e-6, "{fast} vs {oracle}");
    }

    #[test]
    fn bounded_above_by_one_and_symmetric() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        for i in 0..5u64 {
            let a = synth_patch(&config, i).unwrap();
            let b = synth_patch(&config, i + 10).unwrap();
            let s_ab = ssim(&a, &b).unwrap();
            let s_ba = ssim(&b, &a).unwrap();
            assert!(s_ab <= 1.0);
            assert!(s_ab < 1.0 - 1e-9, "distinct images must not reach 1");
            assert!((s_ab - s_ba).abs() < 1e-12);
        }
    }
}
