use crate::{DiffusionError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

/// The beta/alpha/alpha-bar sequences over T timesteps, 1-indexed: `beta(1)`
/// is the first noising step. `alpha_bar(0) == 1` by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    t_total: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn beta(&self, t: usize) -> f64 {
        assert!((1..=self.t_total).contains(&t), "t={t} out of range");
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        assert!((1..=self.t_total).contains(&t), "t={t} out of range");
        self.alpha[t - 1]
    }

    /// Cumulative product of alpha up to t; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.t_total, "t={t} out of range");
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }
}

/// Builds a schedule; linear interpolates beta from `beta_start` to
/// `beta_end` inclusive.
pub fn make_schedule(
    t_total: usize,
    kind: ScheduleKind,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if t_total == 0 {
        return Err(DiffusionError::InvalidArgument("T must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidArgument(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_total)
            .map(|i| {
                if t_total == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_total - 1) as f64
                }
            })
            .collect(),
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_total);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let schedule = NoiseSchedule {
        kind,
        beta_start,
        beta_end,
        t_total,
        beta,
        alpha,
        alpha_bar,
    };
    debug_assert!(schedule.beta.iter().all(|&b| b > 0.0 && b < 1.0));
    debug_assert!(schedule.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    debug_assert!(schedule.alpha_bar[t_total - 1] > 0.0);
    Ok(schedule)
}
