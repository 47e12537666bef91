//! Small dense linear algebra: just enough for stain estimation and
//! Frechet-distance matrix square roots. Matrices are row-major `Vec<f64>`.

use crate::{CoreError, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.at(r, c);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the COLUMNS of the returned matrix.
pub fn sym_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    if a.rows != a.cols {
        return Err(CoreError::InvalidArgument("matrix must be square".into()));
    }
    let n = a.rows;
    for r in 0..n {
        for c in (r + 1)..n {
            if (a.at(r, c) - a.at(c, r)).abs() > 1e-8 * (1.0 + a.at(r, c).abs()) {
                return Err(CoreError::InvalidArgument(format!(
                    "matrix is not symmetric at ({r}, {c})"
                )));
            }
        }
    }

    let mut m = a.clone();
    // Symmetrize exactly so the sweep sees a consistent matrix.
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m.at(r, c) + m.at(c, r));
            *m.at_mut(r, c) = v;
            *m.at_mut(c, r) = v;
        }
    }
    let mut v = Mat::identity(n);

    let off = |m: &Mat| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                s += m.at(r, c) * m.at(r, c);
            }
        }
        s
    };

    let scale: f64 = m.data.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    let tol = 1e-28 * scale;
    for _sweep in 0..100 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors.data[r * n + new_col] = v.at(r, old_col);
        }
    }
    Ok((eigenvalues, vectors))
}

/// Symmetric PSD matrix square root via eigendecomposition. Eigenvalues in
/// `[-neg_tol, 0)` are clamped to zero; more negative ones are an error.
pub fn sym_sqrt(a: &Mat, neg_tol: f64) -> Result<Mat> {
    let n = a.rows;
    let (mut eigenvalues, vectors) = sym_eigen(a)?;
    for ev in &mut eigenvalues {
        if *ev < 0.0 {
            if *ev < -neg_tol {
                return Err(CoreError::Invariant(format!(
                    "matrix has a strongly negative eigenvalue {ev}"
                )));
            }
            *ev = 0.0;
        }
    }
    // V * sqrt(D) * V^T
    let mut scaled = vectors.clone();
    for c in 0..n {
        let s = eigenvalues[c].sqrt();
        for r in 0..n {
            scaled.data[r * n + c] *= s;
        }
    }
    Ok(scaled.matmul(&vectors.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal() {
        let m = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
        let (vals, _) = sym_eigen(&m).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        // Fixed symmetric 4x4.
        let m = Mat::from_rows(&[
            vec![4.0, 1.0, 0.5, 0.2],
            vec![1.0, 3.0, 0.3, 0.1],
            vec![0.5, 0.3, 2.0, 0.4],
            vec![0.2, 0.1, 0.4, 1.0],
        ]);
        let (vals, vecs) = sym_eigen(&m).unwrap();
        let mut d = Mat::zeros(4, 4);
        for i in 0..4 {
            d.data[i * 4 + i] = vals[i];
        }
        let recon = vecs.matmul(&d).matmul(&vecs.transpose());
        assert!(recon.max_abs_diff(&m) < 1e-10, "{:?}", recon);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = Mat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let s = sym_sqrt(&m, 1e-8).unwrap();
        let sq = s.matmul(&s);
        assert!(sq.max_abs_diff(&m) < 1e-10);
    }

    #[test]
    fn strongly_negative_eigenvalue_is_error() {
        let m = Mat::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]);
        assert!(sym_sqrt(&m, 1e-8).is_err());
    }
}
