use serde::{Deserialize, Serialize};

use super::cv::FoldModel;
use crate::corpus::{normalize_text, KcLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::{argmax, ProbabilityVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub per_model: Vec<ProbabilityVector>,
    pub mean: ProbabilityVector,
    /// Argmax of `mean`; ties go to the lower class index.
    pub label: KcLabel,
}

/// Average already-computed probability vectors.
pub fn ensemble_from_probs(per_model: Vec<ProbabilityVector>) -> Result<EnsemblePrediction> {
    if per_model.is_empty() {
        return Err(Error::validation("ensemble needs at least one model"));
    }
    let n = per_model.len() as f64;
    let mut mean = [0.0; NUM_CLASSES];
    for p in &per_model {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    Ok(EnsemblePrediction {
        label: KcLabel::ALL[argmax(&mean)],
        per_model,
        mean,
    })
}

/// Mean of the fold models' probabilities for `text` (raw; normalized here).
pub fn ensemble_predict(models: &[FoldModel], text: &str) -> Result<EnsemblePrediction> {
    if models.is_empty() {
        return Err(Error::validation("ensemble needs at least one model"));
    }
    let norm = normalize_text(text);
    let per_model = models
        .iter()
        .map(|m| m.predict_proba_normalized(&norm))
        .collect::<Result<Vec<_>>>()?;
    ensemble_from_probs(per_model)
}
