//! Paired and omnibus tests over fold-level scores.

use serde::{Deserialize, Serialize};

use super::special::{chi_square_sf, f_sf, normal_cdf, student_t_two_sided};
use crate::error::{Error, Result};

/// Largest number of non-zero differences for which the Wilcoxon p-value is
/// computed exactly; above it the normal approximation is used.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn paired_differences(a: &[f64], b: &[f64], min_n: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "paired series have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_n {
        return Err(Error::validation(format!(
            "need at least {min_n} pairs, got {}",
            a.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Paired t-test on `a - b`, two-sided.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    let d = paired_differences(a, b, 2)?;
    let sd = sample_sd(&d);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let n = d.len() as f64;
    let t = mean(&d) / (sd / n.sqrt());
    let df = n - 1.0;
    Ok(TTestResult {
        t,
        df,
        p_value: student_t_two_sided(t, df),
    })
}

/// Paired Cohen's d: mean of `a - b` over its sample SD.
pub fn cohens_d_paired(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = paired_differences(a, b, 2)?;
    let sd = sample_sd(&d);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    Ok(mean(&d) / sd)
}

/// Ranks 1..n with ties given the average of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of groups of tied values.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-)
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Wilcoxon signed-rank test on `a - b`, two-sided. Zero differences are
/// dropped before ranking; tied magnitudes get midranks.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let d: Vec<f64> = paired_differences(a, b, 1)?.into_iter().filter(|&x| x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x < 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(w_minus);
    let n = d.len();
    let (p_value, method) = if n <= WILCOXON_EXACT_MAX_N {
        (wilcoxon_exact_p(&ranks, w), WilcoxonMethod::Exact)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_groups(&abs)
            .into_iter()
            .map(|t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>()
            / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = ((w_plus - mu).abs() - 0.5).max(0.0) / var.sqrt();
        ((2.0 * (1.0 - normal_cdf(z))).min(1.0), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        w,
        w_plus,
        w_minus,
        n,
        p_value,
        method,
    })
}

/// Exact two-sided p-value: the null distribution of W+ over all 2^n sign
/// assignments of `ranks`, built by counting subset sums. Midranks are
/// multiples of 1/2, so sums are tracked in half-rank units.
fn wilcoxon_exact_p(ranks: &[f64], w: f64) -> f64 {
    let units: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = units.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &u in &units {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + u] += counts[s];
            }
        }
        reach += u;
    }
    let w_units = (w * 2.0).round() as usize;
    let at_or_below: u64 = counts[..=w_units.min(total)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * at_or_below as f64 / all).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub df: f64,
    pub p_value: f64,
    /// Mean within-row rank of each column; rank 1 is the lowest score.
    pub mean_ranks: Vec<f64>,
}

/// Friedman test over a `n_folds x k_models` table, with the usual tie
/// correction. Rows that are constant everywhere give chi2 = 0, p = 1.
pub fn friedman_test(score_table: &[Vec<f64>]) -> Result<FriedmanResult> {
    let n = score_table.len();
    if n < 2 {
        return Err(Error::validation(format!("Friedman test needs >= 2 rows, got {n}")));
    }
    let k = score_table[0].len();
    if k < 2 {
        return Err(Error::validation(format!("Friedman test needs >= 2 models, got {k}")));
    }
    if score_table.iter().any(|row| row.len() != k) {
        return Err(Error::validation("Friedman test: ragged score table"));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_sum = 0.0;
    for row in score_table {
        for (s, r) in rank_sums.iter_mut().zip(midranks(row)) {
            *s += r;
        }
        tie_sum += tie_groups(row)
            .into_iter()
            .map(|t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / nf).collect();
    let df = kf - 1.0;
    let correction = 1.0 - tie_sum / (nf * kf * (kf * kf - 1.0));
    if correction <= 1e-12 {
        return Ok(FriedmanResult {
            chi2: 0.0,
            df,
            p_value: 1.0,
            mean_ranks,
        });
    }
    let centre = (kf + 1.0) / 2.0;
    let ss: f64 = mean_ranks.iter().map(|r| (r - centre) * (r - centre)).sum();
    let chi2 = 12.0 * nf / (kf * (kf + 1.0)) * ss / correction;
    Ok(FriedmanResult {
        chi2,
        df,
        p_value: chi_square_sf(chi2, df).min(1.0),
        mean_ranks,
    })
}

/// Holm step-down adjustment; output is in the input order.
pub fn holm_correction(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let candidate = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(candidate);
        adjusted[i] = running;
    }
    adjusted
}

/// Bonferroni adjustment `min(1, m * p)`.
pub fn bonferroni_correction(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (m * p).min(1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeveneCenter {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeveneResult {
    pub w: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Levene's test for equal variances on absolute deviations from the group
/// centre (mean by default; median gives the Brown-Forsythe variant).
pub fn levene_test(groups: &[Vec<f64>], center: LeveneCenter) -> Result<LeveneResult> {
    if groups.len() < 2 {
        return Err(Error::validation("Levene's test needs at least two groups"));
    }
    if let Some(i) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::validation(format!("group {i} has fewer than 2 values")));
    }
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let c = match center {
                LeveneCenter::Mean => mean(g),
                LeveneCenter::Median => median(g),
            };
            g.iter().map(|x| (x - c).abs()).collect()
        })
        .collect();
    let k = groups.len() as f64;
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let nf = n_total as f64;
    let group_means: Vec<f64> = z.iter().map(|g| mean(g)).collect();
    let grand = z.iter().flatten().sum::<f64>() / nf;
    let between: f64 = z
        .iter()
        .zip(&group_means)
        .map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand))
        .sum();
    let within: f64 = z
        .iter()
        .zip(&group_means)
        .map(|(g, m)| g.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
        .sum();
    let df1 = k - 1.0;
    let df2 = nf - k;
    if within == 0.0 {
        if between == 0.0 {
            return Ok(LeveneResult {
                w: 0.0,
                df1,
                df2,
                p_value: 1.0,
            });
        }
        return Err(Error::Degenerate(
            "absolute deviations are constant within every group".into(),
        ));
    }
    let w = (df2 / df1) * between / within;
    Ok(LeveneResult {
        w,
        df1,
        df2,
        p_value: f_sf(w, df1, df2),
    })
}
