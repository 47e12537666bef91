//! Macenko stain estimation: eigenplane of the tissue OD cloud plus
//! extreme-angle percentiles.

use crate::deconv::deconvolve_od;
use crate::od::{od_norms, percentile, rgb_to_od};
use crate::{Result, StainError};
use stainlab_core::linalg::{sym_eigen, Mat};
use stainlab_core::{ImagePatch, StainMatrix};

pub const MIN_TISSUE_PIXELS: usize = 100;

/// Estimates the 2x3 stain matrix of a patch.
///
/// * `alpha_percentile` - robust angle percentile (the extremes are taken at
///   `alpha` and `100 - alpha`).
/// * `beta_od_threshold` - OD norm below which a pixel is background.
pub fn estimate_macenko(
    patch: &ImagePatch,
    alpha_percentile: f64,
    beta_od_threshold: f64,
) -> Result<StainMatrix> {
    let od = rgb_to_od(patch);
    let norms = od_norms(&od);
    let tissue: Vec<[f64; 3]> = od
        .chunks_exact(3)
        .zip(&norms)
        .filter(|(_, &n)| n > beta_od_threshold)
        .map(|(p, _)| [p[0], p[1], p[2]])
        .collect();
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(StainError::InsufficientTissue {
            found: tissue.len(),
            required: MIN_TISSUE_PIXELS,
        });
    }

    // Second-moment scatter of the OD cloud (no centering: the stain plane
    // passes through the origin).
    let mut scatter = Mat::zeros(3, 3);
    for p in &tissue {
        for r in 0..3 {
            for c in 0..3 {
                scatter.data[r * 3 + c] += p[r] * p[c];
            }
        }
    }
    let n = tissue.len() as f64;
    for v in &mut scatter.data {
        *v /= n;
    }

    let (eigenvalues, vectors) = sym_eigen(&scatter)?;
    if eigenvalues[0] <= 0.0 || eigenvalues[1] / eigenvalues[0] < 1e-4 {
        return Err(StainError::Degenerate(format!(
            "OD cloud is effectively rank 1 (eigenvalues {:.3e}, {:.3e})",
            eigenvalues[0], eigenvalues[1]
        )));
    }

    let mut e1 = [vectors.at(0, 0), vectors.at(1, 0), vectors.at(2, 0)];
    let mut e2 = [vectors.at(0, 1), vectors.at(1, 1), vectors.at(2, 1)];
    // Orient the basis so projections of stain pixels land at positive u.
    let mean: [f64; 3] = {
        let mut m = [0.0; 3];
        for p in &tissue {
            for c in 0..3 {
                m[c] += p[c];
            }
        }
        m.map(|v| v / n)
    };
    if dot(&mean, &e1) < 0.0 {
        e1 = e1.map(|v| -v);
    }
    if e2.iter().sum::<f64>() < 0.0 {
        e2 = e2.map(|v| -v);
    }

    let angles: Vec<f64> = tissue
        .iter()
        .map(|p| dot(p, &e2).atan2(dot(p, &e1)))
        .collect();
    let phi_lo = percentile(&angles, alpha_percentile);
    let phi_hi = percentile(&angles, 100.0 - alpha_percentile);

    let v_lo = combine(&e1, &e2, phi_lo);
    let v_hi = combine(&e1, &e2, phi_hi);

    let matrix = StainMatrix::from_raw_rows([v_lo, v_hi], [0.0, 0.0])
        .map_err(|e| StainError::Degenerate(e.to_string()))?
        .ordered();

    // Concentration percentiles for normalization scaling.
    let conc = deconvolve_od(&od, patch.side(), &matrix)?;
    let maxc = conc.percentile99(&od);
    Ok(matrix
        .with_max_concentrations(maxc)
        .map_err(StainError::Core)?)
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn combine(e1: &[f64; 3], e2: &[f64; 3], phi: f64) -> [f64; 3] {
    let (s, c) = phi.sin_cos();
    [
        c * e1[0] + s * e2[0],
        c * e1[1] + s * e2[1],
        c * e1[2] + s * e2[2],
    ]
}
