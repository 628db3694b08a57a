use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Format;
use crate::error::{Error, Result};
use crate::features::TfIdfConfig;
use crate::linear_models::LinearConfig;
use crate::neural::{CompositeLossConfig, EncoderConfig, TrainConfig};

/// Environment variable capping the number of folds trained concurrently.
pub const WORKERS_ENV: &str = "KC_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "tfidf-lr")]
    TfIdfLr,
    #[serde(rename = "tfidf-svm")]
    TfIdfSvm,
    #[serde(rename = "neural")]
    Neural,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TfIdfLr => "tfidf-lr",
            ModelKind::TfIdfSvm => "tfidf-svm",
            ModelKind::Neural => "neural",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfidf-lr" => Ok(ModelKind::TfIdfLr),
            "tfidf-svm" => Ok(ModelKind::TfIdfSvm),
            "neural" => Ok(ModelKind::Neural),
            _ => Err(Error::validation(format!(
                "unknown model kind {s:?} (expected tfidf-lr, tfidf-svm or neural)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    #[default]
    Balanced,
    Uniform,
}

/// Everything needed to reproduce a cross-validation run. A copy is written
/// to `config.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: PathBuf,
    /// Inferred from the dataset extension when absent.
    #[serde(default)]
    pub format: Option<Format>,
    pub model: ModelKind,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub features: TfIdfConfig,
    #[serde(default)]
    pub class_weighting: ClassWeighting,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub loss: CompositeLossConfig,
    /// `train.seed` is replaced by a per-fold seed derived from `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    /// Runs are written to `<out_dir>/<name>`.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Overrides `KC_WORKERS` when set.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
}

fn default_folds() -> usize {
    10
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, dataset: impl Into<PathBuf>, model: ModelKind) -> Self {
        ExperimentConfig {
            name: name.into(),
            dataset: dataset.into(),
            format: None,
            model,
            n_folds: default_folds(),
            seed: 0,
            features: TfIdfConfig::default(),
            class_weighting: ClassWeighting::default(),
            linear: LinearConfig::default(),
            encoder: EncoderConfig::default(),
            loss: CompositeLossConfig::default(),
            train: TrainConfig::default(),
            out_dir: default_out_dir(),
            workers: None,
            save_checkpoints: true,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(Error::validation(format!("invalid run name {:?}", self.name)));
        }
        if self.n_folds < 2 {
            return Err(Error::validation(format!("n_folds must be >= 2, got {}", self.n_folds)));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers must be >= 1"));
        }
        if self.model == ModelKind::Neural {
            self.encoder.validate()?;
            self.loss.validate()?;
            self.train.validate()?;
        }
        Ok(())
    }

    /// Worker cap: the config value, else `KC_WORKERS`, else rayon's default.
    pub fn effective_workers(&self) -> Result<Option<usize>> {
        if self.workers.is_some() {
            return Ok(self.workers);
        }
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Some(n)),
                _ => Err(Error::validation(format!(
                    "{WORKERS_ENV} must be a positive integer, got {v:?}"
                ))),
            },
            Err(_) => Ok(None),
        }
    }

    /// Seed for the model trained on fold `fold` (SplitMix64 of the run seed
    /// and the fold index).
    pub fn fold_seed(&self, fold: usize) -> u64 {
        let mut z = self
            .seed
            .wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Loss-term ablations of the neural model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// `gamma = 0`, smoothing kept.
    #[serde(rename = "no-focal")]
    NoFocal,
    /// `epsilon = 0`.
    #[serde(rename = "no-ls")]
    NoLs,
    /// `lambda_rd = 0`.
    #[serde(rename = "no-rdrop")]
    NoRdrop,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoRdrop, Ablation::NoLs, Ablation::NoFocal];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoFocal => "no-focal",
            Ablation::NoLs => "no-ls",
            Ablation::NoRdrop => "no-rdrop",
        }
    }

    /// Row label in the model summary table.
    pub fn row_label(self) -> &'static str {
        match self {
            Ablation::NoFocal => "- no Focal",
            Ablation::NoLs => "- no LS",
            Ablation::NoRdrop => "- no R-Drop",
        }
    }

    /// Copy of `cfg` with only the ablated loss field changed.
    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut out = cfg.clone();
        match self {
            Ablation::NoFocal => out.loss.gamma = 0.0,
            Ablation::NoLs => out.loss.epsilon = 0.0,
            Ablation::NoRdrop => out.loss.lambda_rd = 0.0,
        }
        out
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-focal" => Ok(Ablation::NoFocal),
            "no-ls" => Ok(Ablation::NoLs),
            "no-rdrop" => Ok(Ablation::NoRdrop),
            _ => Err(Error::validation(format!(
                "unknown ablation {s:?} (expected no-focal, no-ls or no-rdrop)"
            ))),
        }
    }
}
