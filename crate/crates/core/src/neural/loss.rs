//! Focal loss with label smoothing, and the symmetric-KL (R-Drop) consistency term.

use serde::{Deserialize, Serialize};

use crate::corpus::{KcLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::{log_softmax, ProbabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeLossConfig {
    /// Focusing exponent.
    pub gamma: f64,
    /// Label-smoothing mass spread uniformly over the classes.
    pub epsilon: f64,
    /// Weight of the consistency term.
    pub lambda_rd: f64,
    pub num_classes: usize,
}

impl Default for CompositeLossConfig {
    fn default() -> Self {
        CompositeLossConfig {
            gamma: 2.0,
            epsilon: 0.05,
            lambda_rd: 1.0,
            num_classes: NUM_CLASSES,
        }
    }
}

impl CompositeLossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma.is_finite()
            && self.gamma >= 0.0
            && self.epsilon.is_finite()
            && (0.0..1.0).contains(&self.epsilon)
            && self.lambda_rd.is_finite()
            && self.lambda_rd >= 0.0
            && self.num_classes == NUM_CLASSES;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid loss config {self:?}")))
        }
    }

    /// Largest value the focal term can take when `epsilon > 0`:
    /// `p_y' >= epsilon / K` and the modulating factor is at most 1.
    pub fn focal_upper_bound(&self) -> f64 {
        -(self.epsilon / self.num_classes as f64).ln()
    }
}

/// `-(1 - p_y)^gamma * ln(p_y')` with `p_y' = (1 - eps) p_y + eps / K`.
/// The modulating factor uses the unsmoothed `p_y`.
pub fn focal_ls_loss(prob: &ProbabilityVector, y: KcLabel, cfg: &CompositeLossConfig) -> Result<f64> {
    let p = prob[y.index()];
    let p_s = (1.0 - cfg.epsilon) * p + cfg.epsilon / cfg.num_classes as f64;
    if !(p_s > 0.0) {
        return Err(Error::Numeric(format!(
            "smoothed target probability {p_s} is not positive"
        )));
    }
    Ok(-modulating(1.0 - p, cfg.gamma) * p_s.ln())
}

fn modulating(q: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        q.max(0.0).powf(gamma)
    }
}

/// Focal loss from logits together with its gradient with respect to the
/// logits and the softmax probabilities.
pub(crate) fn focal_from_logits(
    logits: &[f64; NUM_CLASSES],
    y: usize,
    cfg: &CompositeLossConfig,
) -> (f64, [f64; NUM_CLASSES], ProbabilityVector) {
    let lp = log_softmax(logits);
    let p = lp.map(f64::exp);
    let py = p[y];
    let k = cfg.num_classes as f64;
    let eps = cfg.epsilon;
    let p_s = (1.0 - eps) * py + eps / k;
    // ln p_y' computed from log-probabilities when there is no smoothing.
    let ln_ps = if eps == 0.0 { lp[y] } else { p_s.ln() };
    let q = 1.0 - py;
    let m = modulating(q, cfg.gamma);
    let loss = -m * ln_ps;

    // d loss / d p_y, multiplied through by p_y to avoid dividing by it.
    let dm = if cfg.gamma == 0.0 || q <= 0.0 {
        0.0
    } else {
        cfg.gamma * q.powf(cfg.gamma - 1.0)
    };
    let ratio = if eps == 0.0 { 1.0 } else { (1.0 - eps) * py / p_s };
    let c = dm * ln_ps * py - m * ratio;
    let mut grad = [0.0; NUM_CLASSES];
    for j in 0..NUM_CLASSES {
        let delta = if j == y { 1.0 } else { 0.0 };
        grad[j] = c * (delta - p[j]);
    }
    (loss, grad, p)
}

/// `0.5 * [KL(p1 || p2) + KL(p2 || p1)]`.
pub fn rdrop_loss(p1: &ProbabilityVector, p2: &ProbabilityVector) -> Result<f64> {
    if p1.iter().chain(p2).any(|&v| !(v > 0.0)) {
        return Err(Error::Numeric("R-Drop needs strictly positive probabilities".into()));
    }
    Ok(0.5 * p1.iter().zip(p2).map(|(a, b)| (a - b) * (a.ln() - b.ln())).sum::<f64>())
}

/// R-Drop from two logit vectors; returns the loss and the gradients with
/// respect to both sets of logits.
pub(crate) fn rdrop_from_logits(
    l1: &[f64; NUM_CLASSES],
    l2: &[f64; NUM_CLASSES],
) -> (f64, [f64; NUM_CLASSES], [f64; NUM_CLASSES]) {
    let lp1 = log_softmax(l1);
    let lp2 = log_softmax(l2);
    let p1 = lp1.map(f64::exp);
    let p2 = lp2.map(f64::exp);
    let mut loss = 0.0;
    let mut u1 = [0.0; NUM_CLASSES];
    let mut u2 = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        let dl = lp1[k] - lp2[k];
        loss += 0.5 * (p1[k] - p2[k]) * dl;
        u1[k] = 0.5 * (p1[k] * dl + p1[k] - p2[k]);
        u2[k] = 0.5 * (-p2[k] * dl + p2[k] - p1[k]);
    }
    let s1: f64 = u1.iter().sum();
    let s2: f64 = u2.iter().sum();
    let mut g1 = [0.0; NUM_CLASSES];
    let mut g2 = [0.0; NUM_CLASSES];
    for j in 0..NUM_CLASSES {
        g1[j] = u1[j] - p1[j] * s1;
        g2[j] = u2[j] - p2[j] * s2;
    }
    (loss, g1, g2)
}
