use serde::{Deserialize, Serialize};

use crate::corpus::{KcLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[usize; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn from_labels(truth: &[KcLabel], predicted: &[KcLabel]) -> Self {
        let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(predicted) {
            m[t.index()][p.index()] += 1;
        }
        ConfusionMatrix(m)
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn support(&self, k: usize) -> usize {
        self.0[k].iter().sum()
    }

    pub fn predicted(&self, k: usize) -> usize {
        self.0.iter().map(|row| row[k]).sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|k| self.0[k][k]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: KcLabel,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was predicted as this class, so precision was set to 0.
    pub precision_undefined: bool,
    /// The class has no true examples, so recall was set to 0.
    pub recall_undefined: bool,
}

impl ClassMetrics {
    /// A class takes part in macro averaging when it occurs in the truth or
    /// in the predictions.
    pub fn is_active(&self) -> bool {
        self.support > 0 || self.predicted > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold_idx: usize,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: [ClassMetrics; NUM_CLASSES],
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl FoldMetrics {
    pub fn from_confusion(cm: &ConfusionMatrix, fold_idx: usize) -> Self {
        let per_class = KcLabel::ALL.map(|label| {
            let k = label.index();
            let tp = cm.0[k][k];
            let support = cm.support(k);
            let predicted = cm.predicted(k);
            let (precision, precision_undefined) = ratio(tp, predicted);
            let (recall, recall_undefined) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label,
                support,
                predicted,
                precision,
                recall,
                f1,
                precision_undefined,
                recall_undefined,
            }
        });
        let n = cm.total();
        let active: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.is_active()).collect();
        let macro_f1 = if active.is_empty() {
            0.0
        } else {
            active.iter().map(|c| c.f1).sum::<f64>() / active.len() as f64
        };
        let weighted_f1 = if n == 0 {
            0.0
        } else {
            per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / n as f64
        };
        FoldMetrics {
            fold_idx,
            n,
            accuracy: if n == 0 { 0.0 } else { cm.trace() as f64 / n as f64 },
            macro_f1,
            weighted_f1,
            per_class,
        }
    }

    pub fn class(&self, label: KcLabel) -> &ClassMetrics {
        &self.per_class[label.index()]
    }
}

/// Accuracy, macro-F1 (over classes present in truth or predictions),
/// support-weighted F1 and per-class precision/recall/F1.
pub fn compute_metrics(truth: &[KcLabel], predicted: &[KcLabel]) -> Result<(FoldMetrics, ConfusionMatrix)> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::validation(format!(
            "metrics need equal non-empty label lists (got {} and {})",
            truth.len(),
            predicted.len()
        )));
    }
    let cm = ConfusionMatrix::from_labels(truth, predicted);
    Ok((FoldMetrics::from_confusion(&cm, 0), cm))
}
