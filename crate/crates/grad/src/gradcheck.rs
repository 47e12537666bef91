//! Central finite-difference gradient checking, used by the op tests and by
//! the style-transfer acceptance checks.

use crate::tensor::Tensor;

/// Central-difference numeric gradient of a scalar-valued function.
pub fn numeric_grad(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, eps_base: f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let eps = eps_base * orig.abs().max(1.0);
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Max over elements of |a - n| / max(|a|, |n|, 1e-6).
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
