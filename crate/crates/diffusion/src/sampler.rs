//! Ancestral sampling over a subsampled timestep grid.

use crate::process::reverse_step_between;
use crate::schedule::NoiseSchedule;
use crate::{DiffusionError, Result};
use stainlab_core::Rng;

/// Denoising-step count used for inference unless overridden.
pub const DEFAULT_SAMPLE_STEPS: usize = 20;

/// Noise predictor conditioned however the caller wants; `sample` only needs
/// epsilon estimates.
pub trait Denoiser {
    fn estimate_noise(&self, z: &[f64], t: usize) -> Vec<f64>;
}

impl<F: Fn(&[f64], usize) -> Vec<f64>> Denoiser for F {
    fn estimate_noise(&self, z: &[f64], t: usize) -> Vec<f64> {
        self(z, t)
    }
}

/// `n_steps` strictly decreasing timesteps from T down to 1: floor-spaced
/// uniform grid with both endpoints forced. `n_steps = 1` gives `[T]`.
pub fn subsample_timesteps(t_total: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > t_total {
        return Err(DiffusionError::InvalidArgument(format!(
            "n_steps must be in [1, {t_total}], got {n_steps}"
        )));
    }
    if n_steps == 1 {
        return Ok(vec![t_total]);
    }
    let grid: Vec<usize> = (0..n_steps)
        .map(|i| t_total - i * (t_total - 1) / (n_steps - 1))
        .collect();
    debug_assert_eq!(grid[0], t_total);
    debug_assert_eq!(grid[n_steps - 1], 1);
    debug_assert!(grid.windows(2).all(|w| w[1] < w[0]));
    Ok(grid)
}

/// Ancestral sampling from seeded Gaussian noise down to t = 0. Skipped
/// spans use the effective alpha `abar(cur)/abar(next)` so the subsampled
/// chain is self-consistent; the final step to t = 0 injects no noise.
/// Deterministic given the seed.
pub fn sample(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    n_steps: usize,
    n_values: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = subsample_timesteps(schedule.t_total(), n_steps)?;
    let mut rng = Rng::from_seed_stream(seed, 0x7361_6d70);
    let mut z: Vec<f64> = (0..n_values).map(|_| rng.normal()).collect();

    for pair in grid.windows(2) {
        let (t_cur, t_next) = (pair[0], pair[1]);
        let eps = denoiser.estimate_noise(&z, t_cur);
        let alpha_eff = schedule.alpha_bar(t_cur) / schedule.alpha_bar(t_next);
        let noise: Vec<f64> = (0..n_values).map(|_| rng.normal()).collect();
        z = reverse_step_between(
            &z,
            schedule.alpha_bar(t_cur),
            alpha_eff,
            &eps,
            Some(&noise),
        );
    }

    // Final step t_last -> 0, deterministic.
    let t_last = *grid.last().unwrap();
    let eps = denoiser.estimate_noise(&z, t_last);
    let alpha_eff = schedule.alpha_bar(t_last); // abar(t)/abar(0)
    Ok(reverse_step_between(
        &z,
        schedule.alpha_bar(t_last),
        alpha_eff,
        &eps,
        None,
    ))
}
