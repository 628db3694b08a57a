//! Training loop: AdamW, warmup + cosine schedule, early stopping on
//! validation macro-F1.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::CompositeLossConfig;
use super::model::{tokenize, total_loss, Encoder, EncoderConfig};
use super::optim::{lr_at, warmup_steps, AdamW};
use crate::corpus::{Dataset, FoldPlan, KcLabel};
use crate::error::{Error, Result};
use crate::evalstats::compute_metrics;
use crate::exec::Execution;
use crate::{argmax, rng, ProbabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            warmup_ratio: 0.1,
            weight_decay: 0.05,
            max_epochs: 10,
            patience: 2,
            train_batch: 8,
            eval_batch: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.warmup_ratio)
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0
            && self.max_epochs >= 1
            && self.patience >= 1
            && self.train_batch >= 1
            && self.eval_batch >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: Encoder,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub log: Vec<EpochLog>,
}

impl TrainedModel {
    pub fn log_jsonl(&self) -> String {
        log_jsonl(&self.log)
    }
}

pub fn log_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
        .collect()
}

/// Training aborted. Carries the best parameters seen so far (the initial
/// ones if no epoch completed; none if setup itself failed).
#[derive(Debug)]
pub struct TrainFailure {
    pub cause: Error,
    pub last_good: Option<Encoder>,
    pub log: Vec<EpochLog>,
    pub epoch: usize,
    pub step: usize,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "training failed at epoch {} step {} after {} completed epochs: {}",
            self.epoch,
            self.step,
            self.log.len(),
            self.cause
        )
    }
}

impl std::error::Error for TrainFailure {}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Error {
        Error::Numeric(f.to_string())
    }
}

pub type TokenizedExample = (Vec<u32>, KcLabel);

pub fn tokenize_dataset(data: &Dataset, cfg: &EncoderConfig) -> Vec<TokenizedExample> {
    data.examples()
        .iter()
        .map(|e| (tokenize(&e.normalized_text, cfg), e.label))
        .collect()
}

pub fn tokenize_subset(data: &Dataset, indices: &[usize], cfg: &EncoderConfig) -> Vec<TokenizedExample> {
    indices
        .iter()
        .map(|&i| {
            let e = &data.examples()[i];
            (tokenize(&e.normalized_text, cfg), e.label)
        })
        .collect()
}

/// Train on every fold except `fold_idx`, early-stopping on fold `fold_idx`.
pub fn train(
    data: &Dataset,
    plan: &FoldPlan,
    fold_idx: usize,
    enc_cfg: &EncoderConfig,
    loss_cfg: &CompositeLossConfig,
    train_cfg: &TrainConfig,
) -> std::result::Result<TrainedModel, Box<TrainFailure>> {
    let (train_set, val_set) = split_tokens(data, plan, fold_idx, enc_cfg)?;
    let val_labels: Vec<KcLabel> = val_set.iter().map(|e| e.1).collect();
    let exec = Execution::default();
    train_with_validator(&train_set, enc_cfg, loss_cfg, train_cfg, |model, _| {
        let preds = predict_labels(model, &val_set, exec)?;
        Ok(compute_metrics(&val_labels, &preds)?.0.macro_f1)
    })
}

fn split_tokens(
    data: &Dataset,
    plan: &FoldPlan,
    fold_idx: usize,
    enc_cfg: &EncoderConfig,
) -> std::result::Result<(Vec<TokenizedExample>, Vec<TokenizedExample>), Box<TrainFailure>> {
    let early = |cause: Error| {
        Box::new(TrainFailure {
            cause,
            last_good: None,
            log: Vec::new(),
            epoch: 0,
            step: 0,
        })
    };
    enc_cfg.validate().map_err(early)?;
    let (train, val) = plan.split(data, fold_idx).map_err(early)?;
    if train.is_empty() || val.is_empty() {
        return Err(early(Error::validation(format!(
            "fold {fold_idx} leaves an empty split"
        ))));
    }
    Ok((
        tokenize_subset(data, &train, enc_cfg),
        tokenize_subset(data, &val, enc_cfg),
    ))
}

/// Core loop with a caller-supplied validation metric, called with the model
/// and the 1-based epoch after every epoch.
pub fn train_with_validator<V>(
    train_set: &[TokenizedExample],
    enc_cfg: &EncoderConfig,
    loss_cfg: &CompositeLossConfig,
    train_cfg: &TrainConfig,
    mut validator: V,
) -> std::result::Result<TrainedModel, Box<TrainFailure>>
where
    V: FnMut(&Encoder, usize) -> Result<f64>,
{
    let mut model = match Encoder::new(*enc_cfg, train_cfg.seed) {
        Ok(m) => m,
        Err(e) => {
            return Err(Box::new(TrainFailure {
                cause: e,
                last_good: None,
                log: Vec::new(),
                epoch: 0,
                step: 0,
            }))
        }
    };
    let mut best = model.clone();
    let mut log = Vec::new();
    let fail = |cause: Error, best: &Encoder, log: &Vec<EpochLog>, epoch, step| {
        Box::new(TrainFailure {
            cause,
            last_good: Some(best.clone()),
            log: log.clone(),
            epoch,
            step,
        })
    };
    let setup = loss_cfg.validate().and_then(|_| train_cfg.validate()).and_then(|_| {
        if train_set.is_empty() {
            Err(Error::validation("empty training set"))
        } else {
            Ok(())
        }
    });
    if let Err(e) = setup {
        return Err(fail(e, &best, &log, 0, 0));
    }

    let batches_per_epoch = train_set.len().div_ceil(train_cfg.train_batch);
    let total_steps = batches_per_epoch * train_cfg.max_epochs;
    let warmup = warmup_steps(total_steps, train_cfg.warmup_ratio);
    let head_bias = model.layout().head_b;
    let mut opt = AdamW::new(model.params.len(), train_cfg.weight_decay);
    let mut order_rng = rng::stream(train_cfg.seed, 30);
    let mut dropout_rng = rng::stream(train_cfg.seed, 31);
    let bound = loss_cfg.focal_upper_bound();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut step = 0;
    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(train_cfg.train_batch) {
            let batch: Vec<(&[u32], KcLabel)> = chunk
                .iter()
                .map(|&i| (train_set[i].0.as_slice(), train_set[i].1))
                .collect();
            let out = match total_loss(&model, &batch, loss_cfg, &mut dropout_rng) {
                Ok(o) => o,
                Err(e) => return Err(fail(e, &best, &log, epoch, step)),
            };
            if loss_cfg.epsilon > 0.0 && out.max_focal > bound * (1.0 + 1e-12) {
                let e = Error::Numeric(format!("focal term {} exceeds its bound {bound}", out.max_focal));
                return Err(fail(e, &best, &log, epoch, step));
            }
            if out.grad.iter().any(|g| !g.is_finite()) {
                let e = Error::Numeric("non-finite gradient".into());
                return Err(fail(e, &best, &log, epoch, step));
            }
            lr = lr_at(step, total_steps, warmup, train_cfg.lr);
            opt.step(&mut model.params, &out.grad, lr, |i| i < head_bias);
            loss_sum += out.loss * chunk.len() as f64;
            step += 1;
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            let e = Error::Numeric("non-finite parameters after update".into());
            return Err(fail(e, &best, &log, epoch, step));
        }
        let val = match validator(&model, epoch) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &best, &log, epoch, step)),
        };
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            lr,
            val_macro_f1: val,
        });
        if val > best_f1 {
            best_f1 = val;
            best_epoch = epoch;
            best = model.clone();
            wait = 0;
        } else {
            wait += 1;
            if wait >= train_cfg.patience {
                break;
            }
        }
    }
    Ok(TrainedModel {
        encoder: best,
        best_epoch,
        best_val_macro_f1: best_f1,
        log,
    })
}

pub fn predict_proba_many(
    model: &Encoder,
    tokens: &[TokenizedExample],
    exec: Execution,
) -> Result<Vec<ProbabilityVector>> {
    exec.map(tokens, |(t, _)| model.predict_proba(t)).into_iter().collect()
}

fn predict_labels(model: &Encoder, tokens: &[TokenizedExample], exec: Execution) -> Result<Vec<KcLabel>> {
    Ok(predict_proba_many(model, tokens, exec)?
        .iter()
        .map(|p| KcLabel::from_index(argmax(p)).expect("argmax is a class index"))
        .collect())
}
