//! Multinomial logistic regression and one-vs-rest linear SVM over sparse
//! TF-IDF rows, trained by seeded mini-batch proximal gradient descent.
//!
//! Both models minimize
//!
//! ```text
//! J(W, b) = sum_i w_{y_i} * loss_i / sum_i w_{y_i} + (lambda / 2) * ||W||^2
//! ```
//!
//! where `loss_i` is the softmax cross-entropy (logistic) or the sum of the
//! per-class hinge losses `max(0, 1 - t_ik * s_ik)` with `t_ik = +1` for the
//! true class and `-1` otherwise (SVM). Normalizing by the total weight makes
//! an integer class weight `m` equivalent to repeating that class's examples
//! `m` times. The bias is not regularized.
//!
//! Each step applies the data gradient of the current batch and then the exact
//! proximal map of the L2 term, `W <- (W - eta * G) / (1 + eta * lambda)`, so
//! arbitrarily large `lambda` stays stable. `W` is stored as `scale * V` to keep
//! the shrink O(1) for sparse rows.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{KcLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::{ClassWeights, SparseVector};
use crate::{argmax, log_softmax, rng, softmax, ProbabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logistic,
    Svm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub l2_lambda: f64,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Step size at epoch `e` is `learning_rate / (1 + lr_decay * e)`.
    pub lr_decay: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            l2_lambda: 1e-4,
            max_epochs: 50,
            learning_rate: 0.5,
            batch_size: 16,
            lr_decay: 0.05,
        }
    }
}

/// Dense parameters: `weights` is row-major `K x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
}

impl LinearParams {
    pub fn zeros(dim: usize) -> Self {
        LinearParams {
            dim,
            weights: vec![0.0; NUM_CLASSES * dim],
            bias: [0.0; NUM_CLASSES],
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn scores(&self, x: &SparseVector) -> [f64; NUM_CLASSES] {
        let mut s = self.bias;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += x.dot(self.row(k));
        }
        s
    }

    fn sq_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// Per-example loss and its derivative with respect to each class score.
fn example_loss(kind: LinearKind, scores: &[f64; NUM_CLASSES], y: usize) -> (f64, [f64; NUM_CLASSES]) {
    match kind {
        LinearKind::Logistic => {
            let lp = log_softmax(scores);
            let mut g = [0.0; NUM_CLASSES];
            for k in 0..NUM_CLASSES {
                g[k] = lp[k].exp() - if k == y { 1.0 } else { 0.0 };
            }
            (-lp[y], g)
        }
        LinearKind::Svm => {
            let mut loss = 0.0;
            let mut g = [0.0; NUM_CLASSES];
            for k in 0..NUM_CLASSES {
                let t = if k == y { 1.0 } else { -1.0 };
                let margin = t * scores[k];
                if margin < 1.0 {
                    loss += 1.0 - margin;
                    g[k] = -t;
                }
            }
            (loss, g)
        }
    }
}

fn check_inputs(x: &[SparseVector], y: &[KcLabel], dim: usize) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::validation(format!(
            "need |X| = |y| > 0, got {} rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    if let Some((i, row)) = x.iter().enumerate().find(|(_, r)| r.min_dim() > dim) {
        return Err(Error::validation(format!(
            "row {i} has column {} outside dimension {dim}",
            row.min_dim() - 1
        )));
    }
    Ok(())
}

/// Full-batch objective `J(W, b)`.
pub fn objective(
    kind: LinearKind,
    params: &LinearParams,
    x: &[SparseVector],
    y: &[KcLabel],
    weights: &ClassWeights,
    l2_lambda: f64,
) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let w = weights.get(yi);
        total += w * example_loss(kind, &params.scores(xi), yi.index()).0;
        wsum += w;
    }
    total / wsum + 0.5 * l2_lambda * params.sq_norm()
}

/// Full-batch (sub)gradient of [`objective`].
pub fn gradient(
    kind: LinearKind,
    params: &LinearParams,
    x: &[SparseVector],
    y: &[KcLabel],
    weights: &ClassWeights,
    l2_lambda: f64,
) -> LinearParams {
    let mut grad = LinearParams::zeros(params.dim);
    let wsum: f64 = y.iter().map(|&l| weights.get(l)).sum();
    for (xi, &yi) in x.iter().zip(y) {
        let c = weights.get(yi) / wsum;
        let (_, g) = example_loss(kind, &params.scores(xi), yi.index());
        for k in 0..NUM_CLASSES {
            let gk = c * g[k];
            if gk == 0.0 {
                continue;
            }
            grad.bias[k] += gk;
            for (j, v) in xi.iter() {
                grad.weights[k * params.dim + j] += gk * v;
            }
        }
    }
    for (g, w) in grad.weights.iter_mut().zip(&params.weights) {
        *g += l2_lambda * w;
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub num_classes: usize,
    pub seed: u64,
    pub config: LinearConfig,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub params: LinearParams,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn scores(&self, x: &SparseVector) -> Result<[f64; NUM_CLASSES]> {
        if x.min_dim() > self.dim() {
            return Err(Error::validation(format!(
                "input column {} outside model dimension {}",
                x.min_dim() - 1,
                self.dim()
            )));
        }
        Ok(self.params.scores(x))
    }

    /// Softmax over class scores. For the SVM this is an uncalibrated
    /// surrogate over the one-vs-rest margins.
    pub fn predict_proba(&self, x: &SparseVector) -> Result<ProbabilityVector> {
        Ok(softmax(&self.scores(x)?))
    }

    pub fn predict(&self, x: &SparseVector) -> Result<KcLabel> {
        let p = self.predict_proba(x)?;
        Ok(KcLabel::ALL[argmax(&p)])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let m: LinearModel = serde_json::from_reader(BufReader::new(file))?;
        if m.params.weights.len() != NUM_CLASSES * m.params.dim || m.num_classes != NUM_CLASSES {
            return Err(Error::validation("linear model: parameter shape does not match header"));
        }
        Ok(m)
    }
}

pub fn train_logistic(
    x: &[SparseVector],
    y: &[KcLabel],
    dim: usize,
    weights: &ClassWeights,
    config: &LinearConfig,
    seed: u64,
) -> Result<LinearModel> {
    train(LinearKind::Logistic, x, y, dim, weights, config, seed)
}

pub fn train_svm(
    x: &[SparseVector],
    y: &[KcLabel],
    dim: usize,
    weights: &ClassWeights,
    config: &LinearConfig,
    seed: u64,
) -> Result<LinearModel> {
    train(LinearKind::Svm, x, y, dim, weights, config, seed)
}

/// `W = scale * v`, with the shrink folded into `scale`.
struct ScaledParams {
    dim: usize,
    v: Vec<f64>,
    scale: f64,
    bias: [f64; NUM_CLASSES],
}

impl ScaledParams {
    fn scores(&self, x: &SparseVector) -> [f64; NUM_CLASSES] {
        let mut s = self.bias;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += self.scale * x.dot(&self.v[k * self.dim..(k + 1) * self.dim]);
        }
        s
    }

    fn materialize(&self) -> LinearParams {
        LinearParams {
            dim: self.dim,
            weights: self.v.iter().map(|v| v * self.scale).collect(),
            bias: self.bias,
        }
    }
}

pub fn train(
    kind: LinearKind,
    x: &[SparseVector],
    y: &[KcLabel],
    dim: usize,
    weights: &ClassWeights,
    config: &LinearConfig,
    seed: u64,
) -> Result<LinearModel> {
    check_inputs(x, y, dim)?;
    if !(config.l2_lambda >= 0.0) || !(config.learning_rate > 0.0) || config.batch_size == 0 {
        return Err(Error::validation(format!("invalid linear config {config:?}")));
    }
    let initial_objective = objective(kind, &LinearParams::zeros(dim), x, y, weights, config.l2_lambda);
    let mut p = ScaledParams {
        dim,
        v: vec![0.0; NUM_CLASSES * dim],
        scale: 1.0,
        bias: [0.0; NUM_CLASSES],
    };
    let mut rng = rng::stream(seed, 1);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut coeffs: Vec<[f64; NUM_CLASSES]> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.max_epochs {
        let eta = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let wsum: f64 = batch.iter().map(|&i| weights.get(y[i])).sum();
            coeffs.clear();
            for &i in batch {
                let (_, g) = example_loss(kind, &p.scores(&x[i]), y[i].index());
                let c = weights.get(y[i]) / wsum;
                coeffs.push(g.map(|gk| c * gk));
            }
            let step = eta / p.scale;
            for (&i, g) in batch.iter().zip(&coeffs) {
                for k in 0..NUM_CLASSES {
                    if g[k] == 0.0 {
                        continue;
                    }
                    p.bias[k] -= eta * g[k];
                    let row = &mut p.v[k * dim..(k + 1) * dim];
                    for (j, val) in x[i].iter() {
                        row[j] -= step * g[k] * val;
                    }
                }
            }
            p.scale /= 1.0 + eta * config.l2_lambda;
            if p.scale < 1e-8 {
                let s = p.scale;
                p.v.iter_mut().for_each(|v| *v *= s);
                p.scale = 1.0;
            }
        }
        if p.bias.iter().any(|b| !b.is_finite()) || !p.scale.is_finite() {
            return Err(Error::Numeric(format!(
                "{kind:?} training diverged in epoch {epoch} (eta = {eta})"
            )));
        }
    }

    let params = p.materialize();
    let final_objective = objective(kind, &params, x, y, weights, config.l2_lambda);
    if !final_objective.is_finite() || params.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric(format!(
            "{kind:?} training produced a non-finite objective ({final_objective})"
        )));
    }
    Ok(LinearModel {
        kind,
        num_classes: NUM_CLASSES,
        seed,
        config: *config,
        initial_objective,
        final_objective,
        params,
    })
}
