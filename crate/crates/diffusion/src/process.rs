//! Forward noising, reverse denoising steps and the training loss.

use crate::schedule::NoiseSchedule;
use crate::{DiffusionError, Result};

/// One forward step: `z_t = sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) noise`.
pub fn forward_step(z_prev: &[f64], t: usize, noise: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    assert_eq!(z_prev.len(), noise.len());
    let beta = schedule.beta(t);
    let keep = (1.0 - beta).sqrt();
    let add = beta.sqrt();
    z_prev
        .iter()
        .zip(noise)
        .map(|(z, n)| keep * z + add * n)
        .collect()
}

/// Closed-form marginal: `z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) noise`.
pub fn forward_marginal(z0: &[f64], t: usize, noise: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    assert_eq!(z0.len(), noise.len());
    let abar = schedule.alpha_bar(t);
    let keep = abar.sqrt();
    let add = (1.0 - abar).sqrt();
    z0.iter().zip(noise).map(|(z, n)| keep * z + add * n).collect()
}

/// Ancestral reverse step at schedule time `t` (variance sigma_t^2 = beta_t).
/// At t = 1 the noise injection is omitted and the result is deterministic.
pub fn reverse_step(
    z_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if t < 1 || t > schedule.t_total() {
        return Err(DiffusionError::InvalidArgument(format!(
            "reverse step needs 1 <= t <= {}, got {t}",
            schedule.t_total()
        )));
    }
    let noise = if t == 1 { None } else { Some(noise) };
    Ok(reverse_step_between(
        z_t,
        schedule.alpha_bar(t),
        schedule.alpha(t),
        eps_hat,
        noise,
    ))
}

/// Generalized reverse step over a (possibly multi-step) span with effective
/// single-step `alpha_eff = abar_cur / abar_next`:
///
/// `mu = (z - (1 - alpha_eff)/sqrt(1 - abar_cur) * eps) / sqrt(alpha_eff)`
///
/// plus `sqrt(1 - alpha_eff)` noise when provided. With `alpha_eff =
/// alpha_t` this reduces to the plain ancestral step.
pub fn reverse_step_between(
    z_t: &[f64],
    alpha_bar_cur: f64,
    alpha_eff: f64,
    eps_hat: &[f64],
    noise: Option<&[f64]>,
) -> Vec<f64> {
    assert_eq!(z_t.len(), eps_hat.len());
    let beta_eff = 1.0 - alpha_eff;
    let inv_sqrt_alpha = 1.0 / alpha_eff.sqrt();
    let coeff = beta_eff / (1.0 - alpha_bar_cur).sqrt();
    let sigma = beta_eff.sqrt();
    let mut out: Vec<f64> = z_t
        .iter()
        .zip(eps_hat)
        .map(|(z, e)| inv_sqrt_alpha * (z - coeff * e))
        .collect();
    if let Some(noise) = noise {
        assert_eq!(noise.len(), out.len());
        for (o, n) in out.iter_mut().zip(noise) {
            *o += sigma * n;
        }
    }
    out
}

/// Mean squared error between true and estimated noise.
pub fn diffusion_loss(eps: &[f64], eps_hat: &[f64]) -> f64 {
    assert_eq!(eps.len(), eps_hat.len());
    eps.iter()
        .zip(eps_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / eps.len() as f64
}
