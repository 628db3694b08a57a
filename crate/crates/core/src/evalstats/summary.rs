use serde::{Deserialize, Serialize};

use super::hypothesis::sample_sd;
use super::metrics::FoldMetrics;
use crate::corpus::{KcLabel, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample SD; 0 when `n == 1`.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> MeanSd {
        MeanSd {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            sd: sample_sd(values),
            n: values.len(),
        }
    }

    pub fn single_fold(&self) -> bool {
        self.n == 1
    }

    /// `.836 ± .008`
    pub fn display3(&self) -> String {
        format!("{} ± {}", fmt3(self.mean), fmt3(self.sd))
    }
}

/// Three decimals without the leading zero: `0.8364 -> ".836"`.
pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: KcLabel,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub n_folds: usize,
    pub accuracy: MeanSd,
    pub macro_f1: MeanSd,
    pub weighted_f1: MeanSd,
    pub per_class: [ClassSummary; NUM_CLASSES],
}

/// Mean and sample SD of every metric across folds.
pub fn aggregate_cv(per_fold: &[FoldMetrics]) -> Result<CvSummary> {
    if per_fold.is_empty() {
        return Err(Error::validation("no folds to aggregate"));
    }
    let col = |f: &dyn Fn(&FoldMetrics) -> f64| MeanSd::of(&per_fold.iter().map(f).collect::<Vec<_>>());
    let per_class = KcLabel::ALL.map(|label| {
        let k = label.index();
        ClassSummary {
            label,
            precision: col(&|m| m.per_class[k].precision),
            recall: col(&|m| m.per_class[k].recall),
            f1: col(&|m| m.per_class[k].f1),
        }
    });
    Ok(CvSummary {
        n_folds: per_fold.len(),
        accuracy: col(&|m| m.accuracy),
        macro_f1: col(&|m| m.macro_f1),
        weighted_f1: col(&|m| m.weighted_f1),
        per_class,
    })
}
