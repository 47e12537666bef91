use crate::{MetricsError, Result};
use stainlab_core::ImagePatch;

/// Peak signal-to-noise ratio in dB; identical inputs give +infinity.
pub fn psnr(a: &ImagePatch, b: &ImagePatch, peak: f64) -> Result<f64> {
    if a.side() != b.side() {
        return Err(MetricsError::InvalidArgument(format!(
            "shape mismatch: {} vs {}",
            a.side(),
            b.side()
        )));
    }
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::{Magnification, SyntheticCorpusConfig};

    #[test]
    fn identical_is_infinite() {
        let p = ImagePatch::constant("p", 4, Magnification::X20, [0.3, 0.4, 0.5]).unwrap();
        assert_eq!(psnr(&p, &p, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn uniform_difference_closed_form() {
        let a = ImagePatch::constant("a", 8, Magnification::X20, [0.5, 0.5, 0.5]).unwrap();
        let b = ImagePatch::constant("b", 8, Magnification::X20, [0.6, 0.6, 0.6]).unwrap();
        let db = psnr(&a, &b, 1.0).unwrap();
        assert!((db - 20.0).abs() < 1e-10, "{db}");
    }

    #[test]
    fn matches_naive_loop() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        let a = synth_patch(&config, 0).unwrap();
        let b = synth_patch(&config, 1).unwrap();
        let fast = psnr(&a, &b, 1.0).unwrap();

        let mut mse = 0.0;
        for i in 0..a.pixels().len() {
            let d = a.pixels()[i] - b.pixels()[i];
            mse += d * d;
        }
        mse /= a.pixels().len() as f64;
        let oracle = 10.0 * (1.0 / mse).log10();
        assert!((fast - oracle).abs() < 1e-10);
    }

    #[test]
    fn symmetric() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        let a = synth_patch(&config, 2).unwrap();
        let b = synth_patch(&config, 3).unwrap();
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }
}
