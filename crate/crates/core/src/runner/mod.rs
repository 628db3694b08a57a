//! Cross-validation runs, fold ensembling, model comparison and reports.
//!
//! A run directory looks like
//!
//! ```text
//! <out_dir>/<name>/
//!   config.json      exact configuration of the run
//!   foldplan.json    fold assignment (its hash is stored in summary.json)
//!   seeds.json       run seed and derived per-fold seeds
//!   folds/           fold_XX.csv predictions, metrics.csv, fold_XX_log.jsonl
//!   checkpoints/     per-fold models
//!   summary.json     per-fold metrics and mean ± SD
//!   errors.json      only when a fold failed
//! ```

mod compare;
mod config;
mod cv;
mod ensemble;
mod report;

pub use compare::{
    compare_models, compare_summaries, load_paired_runs, BlandAltmanSummary, CompareOptions, ComparisonReport,
    Correction, ModelInterval, PairwiseComparison, BLAND_ALTMAN_CSV, COMPARISON_CSV, COMPARISON_JSON,
};
pub use config::{Ablation, ClassWeighting, ExperimentConfig, ModelKind, WORKERS_ENV};
pub use cv::{
    load_dataset, load_fold_models, run_cv, run_cv_with, CvRun, FoldModel, RunSummary, CHECKPOINTS_DIR, CONFIG_FILE,
    ERRORS_FILE, FOLDPLAN_FILE, FOLDS_DIR, SEEDS_FILE, SUMMARY_FILE,
};
pub use ensemble::{ensemble_from_probs, ensemble_predict, EnsemblePrediction};
pub use report::{
    best_index, build_report, cell, Report, BEST_MARKER, CV_MACRO_F1_CSV, PER_CLASS_CSV, REPORT_MD, SUMMARY_TABLE_CSV,
};
