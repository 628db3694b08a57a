//! Classification metrics and model-comparison statistics.
//!
//! Distribution tails (Student t, F, chi-square, normal) are computed from the
//! regularized incomplete beta and gamma functions in [`special`].

mod hypothesis;
mod metrics;
mod resampling;
pub mod special;
mod summary;

pub use hypothesis::{
    bonferroni_correction, cohens_d_paired, friedman_test, holm_correction, levene_test, midranks, paired_t_test,
    sample_sd, wilcoxon_signed_rank, FriedmanResult, LeveneCenter, LeveneResult, TTestResult, WilcoxonMethod,
    WilcoxonResult, WILCOXON_EXACT_MAX_N,
};
pub use metrics::{compute_metrics, ClassMetrics, ConfusionMatrix, FoldMetrics};
pub use resampling::{
    bland_altman, bootstrap_ci, bootstrap_ci_with, quantile_sorted, BlandAltman, DEFAULT_BOOTSTRAP_RESAMPLES,
};
pub use summary::{aggregate_cv, fmt3, ClassSummary, CvSummary, MeanSd};

/// p-value as displayed in comparison tables (four decimals).
pub fn format_p(p: f64) -> String {
    format!("{p:.4}")
}
