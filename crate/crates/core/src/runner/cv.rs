use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ClassWeighting, ExperimentConfig, ModelKind};
use crate::corpus::{ingest, normalize_text, stratified_kfold, Dataset, FoldPlan, Format, KcLabel};
use crate::error::{Error, Result};
use crate::evalstats::{aggregate_cv, compute_metrics, CvSummary, FoldMetrics};
use crate::exec::Execution;
use crate::features::{fit_tfidf_with, ClassWeights, TfIdfModel};
use crate::linear_models::{self, LinearKind, LinearModel};
use crate::neural::{self, log_jsonl, predict_proba_many, tokenize, tokenize_subset, Encoder, EpochLog};
use crate::{argmax, ProbabilityVector};

pub const CONFIG_FILE: &str = "config.json";
pub const FOLDPLAN_FILE: &str = "foldplan.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SEEDS_FILE: &str = "seeds.json";
pub const ERRORS_FILE: &str = "errors.json";
pub const FOLDS_DIR: &str = "folds";
pub const CHECKPOINTS_DIR: &str = "checkpoints";

/// A model trained on one fold's training split.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum FoldModel {
    Linear { tfidf: TfIdfModel, model: LinearModel },
    Neural(Encoder),
}

#[derive(Serialize, Deserialize)]
struct LinearCheckpoint {
    tfidf: TfIdfModel,
    model: LinearModel,
}

impl FoldModel {
    /// Class probabilities for already-normalized text.
    pub fn predict_proba_normalized(&self, text: &str) -> Result<ProbabilityVector> {
        match self {
            FoldModel::Linear { tfidf, model } => model.predict_proba(&tfidf.transform(text)),
            FoldModel::Neural(enc) => enc.predict_proba(&tokenize(text, &enc.config)),
        }
    }

    pub fn predict_proba(&self, raw_text: &str) -> Result<ProbabilityVector> {
        self.predict_proba_normalized(&normalize_text(raw_text))
    }

    fn file_name(&self, fold: usize) -> String {
        match self {
            FoldModel::Linear { .. } => format!("fold_{fold:02}.json"),
            FoldModel::Neural(_) => format!("fold_{fold:02}.ckpt"),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            FoldModel::Linear { tfidf, model } => {
                let file = File::create(path).map_err(|e| Error::io(path, e))?;
                serde_json::to_writer(
                    BufWriter::new(file),
                    &LinearCheckpoint {
                        tfidf: tfidf.clone(),
                        model: model.clone(),
                    },
                )?;
                Ok(())
            }
            FoldModel::Neural(enc) => enc.save(path),
        }
    }

    pub fn load(path: &Path) -> Result<FoldModel> {
        if path.extension().is_some_and(|e| e == "ckpt") {
            return Ok(FoldModel::Neural(Encoder::load(path)?));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: LinearCheckpoint = serde_json::from_reader(BufReader::new(file))?;
        if ck.model.dim() != ck.tfidf.dim() {
            return Err(Error::validation(format!(
                "{}: model dimension {} does not match vocabulary size {}",
                path.display(),
                ck.model.dim(),
                ck.tfidf.dim()
            )));
        }
        Ok(FoldModel::Linear {
            tfidf: ck.tfidf,
            model: ck.model,
        })
    }
}

/// Per-fold checkpoints of a run, optionally restricted to `folds`.
pub fn load_fold_models(run_dir: &Path, folds: Option<&[usize]>) -> Result<Vec<FoldModel>> {
    let summary = RunSummary::load(run_dir)?;
    let wanted: Vec<usize> = match folds {
        Some(f) => f.to_vec(),
        None => (0..summary.n_folds).collect(),
    };
    let dir = run_dir.join(CHECKPOINTS_DIR);
    let ext = if summary.model == ModelKind::Neural {
        "ckpt"
    } else {
        "json"
    };
    let mut missing = Vec::new();
    let mut models = Vec::new();
    for f in wanted {
        if f >= summary.n_folds {
            return Err(Error::validation(format!(
                "fold {f} out of range for {} folds",
                summary.n_folds
            )));
        }
        let path = dir.join(format!("fold_{f:02}.{ext}"));
        if path.exists() {
            models.push(FoldModel::load(&path)?);
        } else {
            missing.push(path.display().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "missing checkpoints: {}",
            missing.join(", ")
        )));
    }
    Ok(models)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub model: ModelKind,
    pub n_folds: usize,
    pub seed: u64,
    pub n_examples: usize,
    pub fold_plan_hash: String,
    pub folds: Vec<FoldMetrics>,
    pub cv: CvSummary,
    /// Neural runs: epoch whose parameters were kept, per fold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epochs: Option<Vec<usize>>,
}

impl RunSummary {
    pub fn load(run_dir: &Path) -> Result<RunSummary> {
        let path = run_dir.join(SUMMARY_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn macro_f1_by_fold(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.macro_f1).collect()
    }
}

#[derive(Debug, Serialize)]
struct Seeds<'a> {
    seed: u64,
    fold_plan_seed: u64,
    fold_seeds: &'a [u64],
}

#[derive(Debug, Serialize)]
struct FoldError {
    fold: usize,
    error: String,
}

#[derive(Debug, Serialize)]
struct ErrorManifest {
    completed_folds: Vec<usize>,
    failed_folds: Vec<FoldError>,
}

struct FoldOutcome {
    metrics: FoldMetrics,
    ids: Vec<String>,
    truth: Vec<KcLabel>,
    probs: Vec<ProbabilityVector>,
    model: FoldModel,
    log: Option<Vec<EpochLog>>,
    best_epoch: Option<usize>,
}

/// Result of [`run_cv`]: the in-memory summary plus the run directory.
#[derive(Debug, Clone)]
pub struct CvRun {
    pub run_dir: PathBuf,
    pub summary: RunSummary,
}

/// Load the configured dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let format = cfg.format.unwrap_or_else(|| Format::from_path(&cfg.dataset));
    ingest(&cfg.dataset, format)
}

/// Stratified k-fold cross-validation of the configured model. Folds run in
/// parallel (capped by the worker setting); artifacts are written once all
/// folds finish. If any fold fails, completed folds are still written along
/// with `errors.json`, and the first error is returned.
pub fn run_cv(cfg: &ExperimentConfig) -> Result<CvRun> {
    run_cv_with(cfg, Execution::default())
}

pub fn run_cv_with(cfg: &ExperimentConfig, exec: Execution) -> Result<CvRun> {
    cfg.validate()?;
    let workers = cfg.effective_workers()?;
    let data = load_dataset(cfg)?;
    let plan = stratified_kfold(&data, cfg.n_folds, cfg.seed)?;

    let run_dir = cfg.run_dir();
    prepare_run_dir(&run_dir)?;
    write_json(&run_dir.join(CONFIG_FILE), cfg)?;
    plan.save(&run_dir.join(FOLDPLAN_FILE))?;
    let fold_seeds: Vec<u64> = (0..cfg.n_folds).map(|f| cfg.fold_seed(f)).collect();
    write_json(
        &run_dir.join(SEEDS_FILE),
        &Seeds {
            seed: cfg.seed,
            fold_plan_seed: plan.seed,
            fold_seeds: &fold_seeds,
        },
    )?;

    let outcomes: Vec<Result<FoldOutcome>> = exec.with_workers(workers, || {
        exec.map_range(cfg.n_folds, |fold| run_fold(cfg, &data, &plan, fold, exec, &run_dir))
    });

    let folds_dir = run_dir.join(FOLDS_DIR);
    let ckpt_dir = run_dir.join(CHECKPOINTS_DIR);
    let mut completed = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                write_fold_artifacts(&folds_dir, fold, &o)?;
                if cfg.save_checkpoints {
                    o.model.save(&ckpt_dir.join(o.model.file_name(fold)))?;
                }
                completed.push(o);
            }
            Err(e) => {
                failed.push(FoldError {
                    fold,
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        write_json(
            &run_dir.join(ERRORS_FILE),
            &ErrorManifest {
                completed_folds: completed.iter().map(|o| o.metrics.fold_idx).collect(),
                failed_folds: failed,
            },
        )?;
        return Err(e);
    }

    write_fold_table(&folds_dir.join("metrics.csv"), &completed)?;
    let folds: Vec<FoldMetrics> = completed.iter().map(|o| o.metrics.clone()).collect();
    let summary = RunSummary {
        name: cfg.name.clone(),
        model: cfg.model,
        n_folds: cfg.n_folds,
        seed: cfg.seed,
        n_examples: data.len(),
        fold_plan_hash: plan.hash(),
        cv: aggregate_cv(&folds)?,
        folds,
        best_epochs: (cfg.model == ModelKind::Neural)
            .then(|| completed.iter().map(|o| o.best_epoch.unwrap_or(0)).collect()),
    };
    write_json(&run_dir.join(SUMMARY_FILE), &summary)?;
    Ok(CvRun { run_dir, summary })
}

fn prepare_run_dir(run_dir: &Path) -> Result<()> {
    for sub in [FOLDS_DIR, CHECKPOINTS_DIR] {
        let p = run_dir.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for file in [SUMMARY_FILE, ERRORS_FILE] {
        let p = run_dir.join(file);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_fold(
    cfg: &ExperimentConfig,
    data: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    exec: Execution,
    run_dir: &Path,
) -> Result<FoldOutcome> {
    let (train_idx, test_idx) = plan.split(data, fold)?;
    let ex = data.examples();
    let truth: Vec<KcLabel> = test_idx.iter().map(|&i| ex[i].label).collect();
    let ids: Vec<String> = test_idx.iter().map(|&i| ex[i].id.clone()).collect();
    let seed = cfg.fold_seed(fold);

    let (model, probs, log, best_epoch) = match cfg.model {
        ModelKind::TfIdfLr | ModelKind::TfIdfSvm => {
            let train_text: Vec<&str> = train_idx.iter().map(|&i| ex[i].normalized_text.as_str()).collect();
            let test_text: Vec<&str> = test_idx.iter().map(|&i| ex[i].normalized_text.as_str()).collect();
            let train_y: Vec<KcLabel> = train_idx.iter().map(|&i| ex[i].label).collect();
            let tfidf = fit_tfidf_with(&train_text, cfg.features, exec)?;
            let x_train = tfidf.transform_many(&train_text, exec);
            let weights = match cfg.class_weighting {
                ClassWeighting::Balanced => ClassWeights::balanced_from_labels(&train_y)?,
                ClassWeighting::Uniform => ClassWeights::uniform(),
            };
            let kind = if cfg.model == ModelKind::TfIdfLr {
                LinearKind::Logistic
            } else {
                LinearKind::Svm
            };
            let model = linear_models::train(kind, &x_train, &train_y, tfidf.dim(), &weights, &cfg.linear, seed)?;
            let x_test = tfidf.transform_many(&test_text, exec);
            let probs = exec
                .map(&x_test, |x| model.predict_proba(x))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            (FoldModel::Linear { tfidf, model }, probs, None, None)
        }
        ModelKind::Neural => {
            let train_cfg = neural::TrainConfig { seed, ..cfg.train };
            let trained = match neural::train(data, plan, fold, &cfg.encoder, &cfg.loss, &train_cfg) {
                Ok(t) => t,
                Err(failure) => {
                    if let Some(enc) = &failure.last_good {
                        let path = run_dir
                            .join(CHECKPOINTS_DIR)
                            .join(format!("fold_{fold:02}.last_good.ckpt"));
                        enc.save(&path)?;
                    }
                    let log_path = run_dir.join(FOLDS_DIR).join(format!("fold_{fold:02}_log.jsonl"));
                    fs::write(&log_path, log_jsonl(&failure.log)).map_err(|e| Error::io(&log_path, e))?;
                    return Err(Error::from(*failure));
                }
            };
            let test_tokens = tokenize_subset(data, &test_idx, &cfg.encoder);
            let probs = predict_proba_many(&trained.encoder, &test_tokens, exec)?;
            (
                FoldModel::Neural(trained.encoder),
                probs,
                Some(trained.log),
                Some(trained.best_epoch),
            )
        }
    };
    let pred: Vec<KcLabel> = probs.iter().map(|p| KcLabel::ALL[argmax(p)]).collect();
    let (mut metrics, _) = compute_metrics(&truth, &pred)?;
    metrics.fold_idx = fold;
    Ok(FoldOutcome {
        metrics,
        ids,
        truth,
        probs,
        model,
        log,
        best_epoch,
    })
}

fn write_fold_artifacts(dir: &Path, fold: usize, o: &FoldOutcome) -> Result<()> {
    let path = dir.join(format!("fold_{fold:02}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["id".to_string(), "label".into(), "predicted".into()];
    header.extend(KcLabel::ALL.iter().map(|l| format!("p_{}", l.name())));
    w.write_record(&header)?;
    for ((id, t), p) in o.ids.iter().zip(&o.truth).zip(&o.probs) {
        let mut row = vec![
            id.clone(),
            t.name().to_string(),
            KcLabel::ALL[argmax(p)].name().to_string(),
        ];
        row.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    if let Some(log) = &o.log {
        let path = dir.join(format!("fold_{fold:02}_log.jsonl"));
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(log_jsonl(log).as_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_fold_table(path: &Path, outcomes: &[FoldOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["fold", "n", "accuracy", "macro_f1", "weighted_f1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(KcLabel::ALL.iter().map(|l| format!("f1_{}", l.name())));
    w.write_record(&header)?;
    for o in outcomes {
        let m = &o.metrics;
        let mut row = vec![
            m.fold_idx.to_string(),
            m.n.to_string(),
            m.accuracy.to_string(),
            m.macro_f1.to_string(),
            m.weighted_f1.to_string(),
        ];
        row.extend(m.per_class.iter().map(|c| c.f1.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
