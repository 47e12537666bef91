use crate::{MetricsError, Result};
use stainlab_core::ImagePatch;

/// Pearson correlation over flattened pixels. Constant inputs have no
/// defined correlation; the convention here is r = 0 with the degenerate
/// flag set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pearson {
    pub r: f64,
    pub degenerate: bool,
}

pub fn pearson(a: &ImagePatch, b: &ImagePatch) -> Result<Pearson> {
    if a.side() != b.side() {
        return Err(MetricsError::InvalidArgument(format!(
            "shape mismatch: {} vs {}",
            a.side(),
            b.side()
        )));
    }
    let n = a.pixels().len() as f64;
    let mean_a: f64 = a.pixels().iter().sum::<f64>() / n;
    let mean_b: f64 = b.pixels().iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a < 1e-24 || var_b < 1e-24 {
        return Ok(Pearson {
            r: 0.0,
            degenerate: true,
        });
    }
    Ok(Pearson {
        r: (cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}
