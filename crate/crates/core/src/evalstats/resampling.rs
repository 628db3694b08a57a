use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hypothesis::sample_sd;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean of `scores`.
pub fn bootstrap_ci(scores: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    bootstrap_ci_with(scores, resamples, level, seed, Execution::default())
}

/// As [`bootstrap_ci`]. Resample `b` draws from its own seeded stream, so the
/// interval does not depend on the execution mode.
pub fn bootstrap_ci_with(
    scores: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
    exec: Execution,
) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::validation("bootstrap needs at least one score"));
    }
    if resamples < 100 {
        return Err(Error::validation(format!("bootstrap needs B >= 100, got {resamples}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let n = scores.len();
    let mut means = exec.map_range(resamples, |b| {
        let mut rng = rng::stream(seed, 1_000 + b as u64);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += scores[rng.random_range(0..n)];
        }
        sum / n as f64
    });
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `(mean(a_i, b_i), a_i - b_i)` per fold.
    pub pairs: Vec<(f64, f64)>,
}

/// Bias and 95% limits of agreement (`bias +/- 1.96 sd`) of `a - b`.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "Bland-Altman needs equal lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::validation("Bland-Altman needs at least two pairs"));
    }
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).map(|(x, y)| ((x + y) / 2.0, x - y)).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let bias = d.iter().sum::<f64>() / d.len() as f64;
    let sd = sample_sd(&d);
    Ok(BlandAltman {
        bias,
        sd,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        pairs,
    })
}
