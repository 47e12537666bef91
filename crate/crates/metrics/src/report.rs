//! Batch evaluation reports in the mean +- std table style.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            std: f64::NAN,
            n: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, std, n }
}

/// Per-target evaluation block: FID over the whole set plus paired
/// PSNR/SSIM/Pearson summaries.
#[derive(Debug, Clone, Serialize)]
pub struct TargetReport {
    pub target_id: String,
    pub n_pairs: usize,
    pub fid: f64,
    pub psnr: MetricSummary,
    pub ssim: MetricSummary,
    pub pc: MetricSummary,
}
