use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cv::{write_json, RunSummary};
use crate::error::{Error, Result};
use crate::evalstats::{
    bland_altman, bootstrap_ci_with, cohens_d_paired, format_p, friedman_test, holm_correction, paired_t_test,
    wilcoxon_signed_rank, FriedmanResult, WilcoxonMethod, DEFAULT_BOOTSTRAP_RESAMPLES,
};
use crate::exec::Execution;

pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const BLAND_ALTMAN_CSV: &str = "bland_altman.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    Holm,
    None,
}

impl FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holm" => Ok(Correction::Holm),
            "none" => Ok(Correction::None),
            _ => Err(Error::validation(format!(
                "unknown correction {s:?} (expected holm or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub correction: Correction,
    pub bootstrap: usize,
    pub seed: u64,
    pub level: f64,
    pub alpha: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            correction: Correction::Holm,
            bootstrap: DEFAULT_BOOTSTRAP_RESAMPLES,
            seed: 0,
            level: 0.95,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInterval {
    pub model: String,
    pub mean_macro_f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub model_a: String,
    pub model_b: String,
    /// Mean over folds of `a - b` (macro-F1).
    pub mean_diff: f64,
    /// Absent when the differences have zero variance.
    pub t: Option<f64>,
    pub p_t: f64,
    pub p_t_adjusted: f64,
    pub p_wilcoxon: f64,
    pub p_wilcoxon_adjusted: f64,
    pub wilcoxon_method: Option<WilcoxonMethod>,
    /// Absent when the differences have zero variance.
    pub cohens_d: Option<f64>,
    pub diff_ci_low: f64,
    pub diff_ci_high: f64,
    /// Adjusted Wilcoxon p below alpha.
    pub significant: bool,
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanSummary {
    pub model_a: String,
    pub model_b: String,
    pub bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `(mean, difference)` per fold.
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<String>,
    pub n_folds: usize,
    pub fold_plan_hash: String,
    pub correction: Correction,
    pub alpha: f64,
    pub bootstrap_resamples: usize,
    /// Omnibus test over all models; absent for a single model.
    pub friedman: Option<FriedmanResult>,
    pub intervals: Vec<ModelInterval>,
    pub pairwise: Vec<PairwiseComparison>,
    pub bland_altman: Vec<BlandAltmanSummary>,
}

/// Load run summaries and check that they share one fold plan.
pub fn load_paired_runs(run_dirs: &[PathBuf]) -> Result<Vec<RunSummary>> {
    if run_dirs.is_empty() {
        return Err(Error::validation("no runs given"));
    }
    let runs = run_dirs
        .iter()
        .map(|d| RunSummary::load(d))
        .collect::<Result<Vec<_>>>()?;
    let first = &runs[0];
    for (dir, r) in run_dirs.iter().zip(&runs).skip(1) {
        if r.n_folds != first.n_folds || r.fold_plan_hash != first.fold_plan_hash {
            return Err(Error::validation(format!(
                "run {} uses a different fold plan ({} folds, hash {}) than {} ({} folds, hash {}); \
                 paired tests need identical folds",
                dir.display(),
                r.n_folds,
                r.fold_plan_hash,
                run_dirs[0].display(),
                first.n_folds,
                first.fold_plan_hash
            )));
        }
    }
    Ok(runs)
}

/// Unique display names: the run name, suffixed with its position on clashes.
fn display_names(runs: &[RunSummary]) -> Vec<String> {
    runs.iter()
        .enumerate()
        .map(|(i, r)| {
            if runs.iter().filter(|o| o.name == r.name).count() > 1 {
                format!("{}#{}", r.name, i + 1)
            } else {
                r.name.clone()
            }
        })
        .collect()
}

/// Friedman omnibus, pairwise paired t / Wilcoxon / Cohen's d / bootstrap CI
/// of the differences with a multiplicity correction, per-model bootstrap
/// intervals and Bland-Altman agreement for every pair.
pub fn compare_models(run_dirs: &[PathBuf], opts: &CompareOptions) -> Result<ComparisonReport> {
    let runs = load_paired_runs(run_dirs)?;
    compare_summaries(&runs, opts)
}

pub fn compare_summaries(runs: &[RunSummary], opts: &CompareOptions) -> Result<ComparisonReport> {
    if runs.is_empty() {
        return Err(Error::validation("no runs given"));
    }
    if opts.bootstrap == 0 {
        return Err(Error::validation("bootstrap resamples must be >= 1"));
    }
    let names = display_names(runs);
    let scores: Vec<Vec<f64>> = runs.iter().map(|r| r.macro_f1_by_fold()).collect();
    let n_folds = scores[0].len();
    if scores.iter().any(|s| s.len() != n_folds) {
        return Err(Error::validation("runs report different numbers of folds"));
    }
    let exec = Execution::default();

    let friedman = if runs.len() >= 2 {
        let table: Vec<Vec<f64>> = (0..n_folds).map(|f| scores.iter().map(|s| s[f]).collect()).collect();
        Some(friedman_test(&table)?)
    } else {
        None
    };

    let intervals = names
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (name, s))| {
            let (lo, hi) = bootstrap_ci_with(s, opts.bootstrap, opts.level, opts.seed.wrapping_add(i as u64), exec)?;
            Ok(ModelInterval {
                model: name.clone(),
                mean_macro_f1: s.iter().sum::<f64>() / s.len() as f64,
                ci_low: lo,
                ci_high: hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pairwise = Vec::new();
    let mut bland = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, b) = (&scores[i], &scores[j]);
            let pair_seed = opts.seed.wrapping_add(1000 + (i * runs.len() + j) as u64);
            pairwise.push(compare_pair(&names[i], &names[j], a, b, opts, pair_seed, exec)?);
            let ba = bland_altman(a, b)?;
            bland.push(BlandAltmanSummary {
                model_a: names[i].clone(),
                model_b: names[j].clone(),
                bias: ba.bias,
                sd: ba.sd,
                loa_low: ba.loa_low,
                loa_high: ba.loa_high,
                pairs: ba.pairs,
            });
        }
    }
    let adjust = |p: Vec<f64>| match opts.correction {
        Correction::Holm => holm_correction(&p),
        Correction::None => p,
    };
    let adj_t = adjust(pairwise.iter().map(|c| c.p_t).collect());
    let adj_w = adjust(pairwise.iter().map(|c| c.p_wilcoxon).collect());
    for ((c, pt), pw) in pairwise.iter_mut().zip(adj_t).zip(adj_w) {
        c.p_t_adjusted = pt;
        c.p_wilcoxon_adjusted = pw;
        if c.verdict != "identical" {
            c.significant = pw < opts.alpha;
            c.verdict = if !c.significant {
                "no significant difference".into()
            } else if c.mean_diff > 0.0 {
                format!("{} better", c.model_a)
            } else {
                format!("{} better", c.model_b)
            };
        }
    }

    Ok(ComparisonReport {
        models: names,
        n_folds,
        fold_plan_hash: runs[0].fold_plan_hash.clone(),
        correction: opts.correction,
        alpha: opts.alpha,
        bootstrap_resamples: opts.bootstrap,
        friedman,
        intervals,
        pairwise,
        bland_altman: bland,
    })
}

fn compare_pair(
    name_a: &str,
    name_b: &str,
    a: &[f64],
    b: &[f64],
    opts: &CompareOptions,
    seed: u64,
    exec: Execution,
) -> Result<PairwiseComparison> {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let (diff_ci_low, diff_ci_high) = bootstrap_ci_with(&diffs, opts.bootstrap, opts.level, seed, exec)?;
    let mut notes = Vec::new();
    let base = PairwiseComparison {
        model_a: name_a.to_string(),
        model_b: name_b.to_string(),
        mean_diff,
        t: None,
        p_t: 1.0,
        p_t_adjusted: 1.0,
        p_wilcoxon: 1.0,
        p_wilcoxon_adjusted: 1.0,
        wilcoxon_method: None,
        cohens_d: None,
        diff_ci_low,
        diff_ci_high,
        significant: false,
        verdict: String::new(),
        notes: Vec::new(),
    };
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(PairwiseComparison {
            verdict: "identical".into(),
            notes: vec!["all fold differences are zero; tests are undefined and p is reported as 1".into()],
            ..base
        });
    }
    let (t, p_t, d) = match paired_t_test(a, b) {
        Ok(r) => (Some(r.t), r.p_value, cohens_d_paired(a, b).ok()),
        Err(Error::Degenerate(_)) => {
            notes.push("fold differences are constant and nonzero: t and d are unbounded, p_t = 0".into());
            (None, 0.0, None)
        }
        Err(e) => return Err(e),
    };
    let w = wilcoxon_signed_rank(a, b)?;
    Ok(PairwiseComparison {
        t,
        p_t,
        p_wilcoxon: w.p_value,
        wilcoxon_method: Some(w.method),
        cohens_d: d,
        notes,
        ..base
    })
}

impl ComparisonReport {
    /// Writes `comparison.json`, `comparison.csv` (one row per pair) and
    /// `bland_altman.csv` (one row per pair and fold) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(COMPARISON_JSON), self)?;

        let path = dir.join(COMPARISON_CSV);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "model_a",
            "model_b",
            "delta_macro_f1",
            "t",
            "p_t",
            "p_t_adjusted",
            "p_wilcoxon",
            "p_wilcoxon_adjusted",
            "cohens_d",
            "diff_ci_low",
            "diff_ci_high",
            "significant",
            "verdict",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        for c in &self.pairwise {
            w.write_record([
                c.model_a.clone(),
                c.model_b.clone(),
                format!("{:.4}", c.mean_diff),
                opt(c.t),
                format_p(c.p_t),
                format_p(c.p_t_adjusted),
                format_p(c.p_wilcoxon),
                format_p(c.p_wilcoxon_adjusted),
                opt(c.cohens_d),
                format!("{:.4}", c.diff_ci_low),
                format!("{:.4}", c.diff_ci_high),
                c.significant.to_string(),
                c.verdict.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        write_bland_altman_csv(&dir.join(BLAND_ALTMAN_CSV), &self.bland_altman)
    }

    /// Plain-text rendering for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(f) = &self.friedman {
            out += &format!(
                "Friedman: chi2 = {:.4}, df = {}, p = {}\n",
                f.chi2,
                f.df,
                format_p(f.p_value)
            );
        }
        out += "\nmodel\tmean macro-F1\tCI\n";
        for m in &self.intervals {
            out += &format!(
                "{}\t{:.4}\t[{:.4}, {:.4}]\n",
                m.model, m.mean_macro_f1, m.ci_low, m.ci_high
            );
        }
        let correction = match self.correction {
            Correction::Holm => "Holm",
            Correction::None => "none",
        };
        out += &format!("\npairwise (correction: {correction})\n");
        out += "A\tB\tdelta\tt\tp_t\tp_W\tp_W adj\td\tverdict\n";
        for c in &self.pairwise {
            let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"));
            out += &format!(
                "{}\t{}\t{:+.4}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.model_a,
                c.model_b,
                c.mean_diff,
                opt(c.t),
                format_p(c.p_t),
                format_p(c.p_wilcoxon),
                format_p(c.p_wilcoxon_adjusted),
                opt(c.cohens_d),
                c.verdict
            );
        }
        out
    }
}

pub(crate) fn write_bland_altman_csv(path: &Path, rows: &[BlandAltmanSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model_a",
        "model_b",
        "fold",
        "mean",
        "difference",
        "bias",
        "loa_low",
        "loa_high",
    ])?;
    for ba in rows {
        for (fold, (m, d)) in ba.pairs.iter().enumerate() {
            w.write_record([
                ba.model_a.clone(),
                ba.model_b.clone(),
                fold.to_string(),
                m.to_string(),
                d.to_string(),
                ba.bias.to_string(),
                ba.loa_low.to_string(),
                ba.loa_high.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
