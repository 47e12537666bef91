//! Scaled-dot-product cross-attention, reference (non-differentiable) form:
//! `softmax(Q K^T / sqrt(d)) V` with Q from the query features and K, V
//! from the conditioning context.

use crate::Result;
use stainlab_core::linalg::Mat;

/// Projection weights for one cross-attention site. Each projection is
/// stored as `[d, d_in]` so `project(x) = x . W^T`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub d: usize,
}

impl AttentionWeights {
    pub fn new(w_q: Mat, w_k: Mat, w_v: Mat) -> Self {
        assert_eq!(w_q.rows, w_k.rows, "key/query dims differ");
        assert_eq!(w_k.rows, w_v.rows, "key/value dims differ");
        assert_eq!(w_k.cols, w_v.cols, "context dims differ");
        let d = w_q.rows;
        AttentionWeights { w_q, w_k, w_v, d }
    }
}

fn project(x: &Mat, w: &Mat) -> Mat {
    x.matmul(&w.transpose())
}

/// Rows of the output are convex combinations of the projected context rows.
pub fn cross_attention(query: &Mat, context: &Mat, weights: &AttentionWeights) -> Result<Mat> {
    let q = project(query, &weights.w_q); // [n_q, d]
    let k = project(context, &weights.w_k); // [n_c, d]
    let v = project(context, &weights.w_v); // [n_c, d]
    let scale = 1.0 / (weights.d as f64).sqrt();

    let n_q = q.rows;
    let n_c = k.rows;
    let d = weights.d;
    let mut out = Mat::zeros(n_q, d);
    for i in 0..n_q {
        // Scores for query row i.
        let mut scores = vec![0.0f64; n_c];
        for (j, s) in scores.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..d {
                acc += q.at(i, c) * k.at(j, c);
            }
            *s = acc * scale;
        }
        let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for s in &mut scores {
            *s = (*s - max).exp();
            z += *s;
        }
        for s in &mut scores {
            *s /= z;
        }
        debug_assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (j, &a) in scores.iter().enumerate() {
            for c in 0..d {
                *out.at_mut(i, c) += a * v.at(j, c);
            }
        }
    }
    Ok(out)
}
