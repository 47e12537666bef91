//! Frechet distance between Gaussian fits of embedding clouds.

use crate::{MetricsError, Result};
use stainlab_core::embed::FeatureExtractor;
use stainlab_core::linalg::{sym_sqrt, Mat};
use stainlab_core::ImagePatch;

const NEG_EIGENVALUE_TOL: f64 = 1e-8;

/// Sample mean and unbiased covariance of an embedding cloud.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Mat,
    pub n: usize,
}

pub fn gaussian_stats(embeddings: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = embeddings.len();
    if n < 2 {
        return Err(MetricsError::InvalidArgument(
            "need at least 2 embeddings for covariance".into(),
        ));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(MetricsError::InvalidArgument("ragged embeddings".into()));
    }
    let mut mean = vec![0.0; d];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Mat::zeros(d, d);
    for e in embeddings {
        for r in 0..d {
            let dr = e[r] - mean[r];
            for c in r..d {
                cov.data[r * d + c] += dr * (e[c] - mean[c]);
            }
        }
    }
    for r in 0..d {
        for c in r..d {
            let v = cov.at(r, c) / (n - 1) as f64;
            *cov.at_mut(r, c) = v;
            *cov.at_mut(c, r) = v;
        }
    }
    Ok(GaussianStats { mean, cov, n })
}

/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`, with the square root
/// taken through the symmetric product `sqrt(S1) S2 sqrt(S1)`. Eigenvalues
/// in `[-1e-8, 0)` clamp to zero; anything more negative is an error.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<f64> {
    if s1.mean.len() != s2.mean.len() {
        return Err(MetricsError::InvalidArgument(
            "stats have different dimensions".into(),
        ));
    }
    let mean_term: f64 = s1
        .mean
        .iter()
        .zip(&s2.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let sqrt1 = sym_sqrt(&s1.cov, NEG_EIGENVALUE_TOL)
        .map_err(|e| MetricsError::Numerical(e.to_string()))?;
    let inner = sqrt1.matmul(&s2.cov).matmul(&sqrt1);
    // Trace of the matrix square root = sum of sqrt eigenvalues.
    let (eigenvalues, _) = stainlab_core::linalg::sym_eigen(&inner)
        .map_err(|e| MetricsError::Numerical(e.to_string()))?;
    let mut tr_sqrt = 0.0;
    for ev in eigenvalues {
        if ev < -NEG_EIGENVALUE_TOL {
            return Err(MetricsError::Numerical(format!(
                "strongly negative eigenvalue {ev} in covariance product"
            )));
        }
        tr_sqrt += ev.max(0.0).sqrt();
    }
    let d = s1.mean.len();
    let mut trace = 0.0;
    for i in 0..d {
        trace += s1.cov.at(i, i) + s2.cov.at(i, i);
    }
    Ok((mean_term + trace - 2.0 * tr_sqrt).max(0.0))
}

/// Frechet distance between two patch sets under an embedding.
pub fn fid(
    set_a: &[ImagePatch],
    set_b: &[ImagePatch],
    embedder: &dyn FeatureExtractor,
) -> Result<f64> {
    let embed = |set: &[ImagePatch]| -> Vec<Vec<f64>> {
        set.iter().map(|p| embedder.extract(p)).collect()
    };
    let s1 = gaussian_stats(&embed(set_a))?;
    let s2 = gaussian_stats(&embed(set_b))?;
    frechet_distance(&s1, &s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_core::embed::ConvEmbedder;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::{Magnification, Rng, SyntheticCorpusConfig};

    #[test]
    fn identical_rows_zero_covariance() {
        let stats = gaussian_stats(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(stats.cov.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_hand_arithmetic() {
        let stats = gaussian_stats(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.cov.at(0, 0), 2.0);
    }

    #[test]
    fn stats_match_naive_oracle() {
        let mut rng = Rng::from_seed(1);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..4).map(|_| rng.normal()).collect())
            .collect();
        let stats = gaussian_stats(&rows).unwrap();
        for r in 0..4 {
            let mean_r: f64 = rows.iter().map(|v| v[r]).sum::<f64>() / 20.0;
            assert!((stats.mean[r] - mean_r).abs() < 1e-10);
            for c in 0..4 {
                let mean_c: f64 = rows.iter().map(|v| v[c]).sum::<f64>() / 20.0;
                let cov: f64 = rows
                    .iter()
                    .map(|v| (v[r] - mean_r) * (v[c] - mean_c))
                    .sum::<f64>()
                    / 19.0;
                assert!((stats.cov.at(r, c) - cov).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn distance_closed_forms() {
        // Same stats -> 0.
        let stats = gaussian_stats(&[vec![0.5, 1.0], vec![1.5, -1.0], vec![0.0, 0.3]]).unwrap();
        let zero = frechet_distance(&stats, &stats).unwrap();
        assert!(zero.abs() < 1e-8, "{zero}");

        // Identity covariances, mean shift v -> ||v||^2.
        let s1 = GaussianStats {
            mean: vec![0.0, 0.0, 0.0],
            cov: Mat::identity(3),
            n: 10,
        };
        let s2 = GaussianStats {
            mean: vec![1.0, 2.0, 2.0],
            cov: Mat::identity(3),
            n: 10,
        };
        let d = frechet_distance(&s1, &s2).unwrap();
        assert!((d - 9.0).abs() < 1e-10, "{d}");

        // Scalar case (mu, var) = (0,1), (1,4): 1 + 1 + 4 - 2*2 = 2.
        let a = GaussianStats {
            mean: vec![0.0],
            cov: Mat::from_rows(&[vec![1.0]]),
            n: 5,
        };
        let b = GaussianStats {
            mean: vec![1.0],
            cov: Mat::from_rows(&[vec![4.0]]),
            n: 5,
        };
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 2.0).abs() < 1e-8, "{d}");
    }

    #[test]
    fn strongly_negative_covariance_is_error() {
        let bad = GaussianStats {
            mean: vec![0.0, 0.0],
            cov: Mat::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]),
            n: 3,
        };
        let good = GaussianStats {
            mean: vec![0.0, 0.0],
            cov: Mat::identity(2),
            n: 3,
        };
        assert!(frechet_distance(&bad, &good).is_err());
    }

    #[test]
    fn fid_self_zero_and_shift_monotone() {
        let config = SyntheticCorpusConfig {
            side: 16,
            n_patches: 12,
            ..Default::default()
        };
        let set: Vec<ImagePatch> = (0..12).map(|i| synth_patch(&config, i).unwrap()).collect();
        let embedder = ConvEmbedder::new(5);

        let self_fid = fid(&set, &set, &embedder).unwrap();
        assert!(self_fid.abs() < 1e-8, "{self_fid}");

        let shift = |amount: f64| -> Vec<ImagePatch> {
            set.iter()
                .map(|p| {
                    let pixels = p.pixels().iter().map(|v| (v + amount).min(1.0)).collect();
                    ImagePatch::new(format!("{}-s", p.id), 16, Magnification::X20, pixels)
                        .unwrap()
                })
                .collect()
        };
        let small = fid(&set, &shift(0.05), &embedder).unwrap();
        let large = fid(&set, &shift(0.15), &embedder).unwrap();
        assert!(small > 0.0);
        assert!(large > small, "{large} vs {small}");
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = Rng::from_seed(2);
        let mut rows = |shift: f64| -> Vec<Vec<f64>> {
            (0..16)
                .map(|_| (0..3).map(|_| rng.normal() + shift).collect())
                .collect()
        };
        let r1 = rows(0.0);
        let r2 = rows(0.7);
        let s1 = gaussian_stats(&r1).unwrap();
        let s2 = gaussian_stats(&r2).unwrap();
        let ab = frechet_distance(&s1, &s2).unwrap();
        let ba = frechet_distance(&s2, &s1).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab >= 0.0);
    }
}
