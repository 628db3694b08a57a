//! Knowledge-construction (KC) comment classification toolkit.
//!
//! The crate covers the whole experimental loop for classifying short
//! discussion comments into four knowledge-construction levels:
//!
//! - [`corpus`]: labels, ingestion, text normalization, stratified folds, Cohen's kappa.
//! - [`features`]: character n-gram TF-IDF and balanced class weights.
//! - [`linear_models`]: multinomial logistic regression and one-vs-rest linear SVM.
//! - [`neural`]: a small attention encoder trained with focal loss, label
//!   smoothing and R-Drop under AdamW with a warmup + cosine schedule.
//! - [`evalstats`]: classification metrics and the model-comparison statistics.
//! - [`runner`]: cross-validation runs, fold ensembling, comparison and reports.
//!
//! Data-parallel loops (folds, bootstrap resamples, batch scoring) run on rayon
//! when the `parallel` feature is enabled (the default) and sequentially
//! otherwise; see [`exec`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod corpus;
pub mod error;
pub mod evalstats;
pub mod exec;
pub mod features;
pub mod linear_models;
pub mod neural;
pub mod runner;
pub mod synthetic;

mod rng;

pub use corpus::{Dataset, FoldPlan, KcLabel, LabeledExample, Source, NUM_CLASSES};
pub use error::{Error, Result};
pub use exec::Execution;

/// A probability vector over the four KC classes.
pub type ProbabilityVector = [f64; NUM_CLASSES];

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax over class scores.
pub fn softmax(scores: &[f64; NUM_CLASSES]) -> ProbabilityVector {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Log-softmax, used where log-probabilities must stay finite.
pub fn log_softmax(scores: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let mut out = [0.0; NUM_CLASSES];
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = s - lse;
    }
    out
}
