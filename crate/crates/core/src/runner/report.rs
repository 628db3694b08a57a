use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::compare::{write_bland_altman_csv, BlandAltmanSummary, BLAND_ALTMAN_CSV};
use super::config::Ablation;
use super::cv::{RunSummary, CONFIG_FILE, FOLDPLAN_FILE, SUMMARY_FILE};
use crate::corpus::KcLabel;
use crate::error::{Error, Result};
use crate::evalstats::{bland_altman, MeanSd};

pub const SUMMARY_TABLE_CSV: &str = "summary_table.csv";
pub const PER_CLASS_CSV: &str = "per_class.csv";
pub const CV_MACRO_F1_CSV: &str = "cv_macro_f1.csv";
pub const REPORT_MD: &str = "report.md";

/// Marks the best cell of a column.
pub const BEST_MARKER: &str = "**";

/// Index of the largest mean; ties go to the earliest row.
pub fn best_index(values: &[MeanSd]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| v.mean > values[b].mean) {
            best = Some(i);
        }
    }
    best
}

/// `mean ± sd` with three decimals, wrapped in the best marker when `best`.
pub fn cell(v: &MeanSd, best: bool) -> String {
    if best {
        format!("{BEST_MARKER}{}{BEST_MARKER}", v.display3())
    } else {
        v.display3()
    }
}

/// Rendered tables plus the run summaries they came from.
#[derive(Debug, Clone)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    /// Model summary table: header + one row per run.
    pub summary_table: Vec<Vec<String>>,
    /// Per class: header + one row per run.
    pub class_tables: Vec<(KcLabel, Vec<Vec<String>>)>,
    pub bland_altman: Vec<BlandAltmanSummary>,
    pub notes: Vec<String>,
}

fn check_artifacts(run_dirs: &[PathBuf]) -> Result<()> {
    let mut missing = Vec::new();
    for dir in run_dirs {
        for file in [SUMMARY_FILE, CONFIG_FILE, FOLDPLAN_FILE] {
            let p = dir.join(file);
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "missing run artifacts: {}",
            missing.join(", ")
        )))
    }
}

/// Table row label: ablation runs (named `<base>-no-rdrop` etc.) get the
/// ablation's row label.
fn row_name(name: &str) -> String {
    Ablation::ALL
        .iter()
        .find(|a| name.strip_suffix(a.as_str()).is_some_and(|b| b.ends_with('-')))
        .map_or_else(|| name.to_string(), |a| a.row_label().to_string())
}

fn table(rows: &[(String, Vec<MeanSd>)], header: &[&str]) -> Vec<Vec<String>> {
    let n_cols = header.len() - 1;
    let best: Vec<Option<usize>> = (0..n_cols)
        .map(|c| best_index(&rows.iter().map(|r| r.1[c]).collect::<Vec<_>>()))
        .collect();
    let mut out = vec![header.iter().map(|s| s.to_string()).collect()];
    for (i, (name, vals)) in rows.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(vals.iter().enumerate().map(|(c, v)| cell(v, best[c] == Some(i))));
        out.push(row);
    }
    out
}

/// Build the model summary table, per-class tables and pairwise
/// Bland-Altman data for a set of runs.
pub fn build_report(run_dirs: &[PathBuf]) -> Result<Report> {
    if run_dirs.is_empty() {
        return Err(Error::validation("no runs given"));
    }
    check_artifacts(run_dirs)?;
    let runs = run_dirs
        .iter()
        .map(|d| RunSummary::load(d))
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<(String, Vec<MeanSd>)> = runs
        .iter()
        .map(|r| (row_name(&r.name), vec![r.cv.accuracy, r.cv.macro_f1, r.cv.weighted_f1]))
        .collect();
    let summary_table = table(&rows, &["Model", "Accuracy", "Macro-F1", "Weighted-F1"]);

    let class_tables = KcLabel::ALL
        .iter()
        .map(|&label| {
            let rows: Vec<(String, Vec<MeanSd>)> = runs
                .iter()
                .map(|r| {
                    let c = &r.cv.per_class[label.index()];
                    (row_name(&r.name), vec![c.precision, c.recall, c.f1])
                })
                .collect();
            (label, table(&rows, &["Model", "Precision", "Recall", "F1"]))
        })
        .collect();

    let mut notes = Vec::new();
    let mut ba = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, b) = (&runs[i], &runs[j]);
            if a.fold_plan_hash != b.fold_plan_hash {
                notes.push(format!(
                    "{} and {} use different fold plans; no Bland-Altman data",
                    a.name, b.name
                ));
                continue;
            }
            let r = bland_altman(&a.macro_f1_by_fold(), &b.macro_f1_by_fold())?;
            ba.push(BlandAltmanSummary {
                model_a: a.name.clone(),
                model_b: b.name.clone(),
                bias: r.bias,
                sd: r.sd,
                loa_low: r.loa_low,
                loa_high: r.loa_high,
                pairs: r.pairs,
            });
        }
    }
    Ok(Report {
        runs,
        summary_table,
        class_tables,
        bland_altman: ba,
        notes,
    })
}

fn markdown(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        out += &format!("| {} |\n", row.join(" | "));
        if i == 0 {
            out += &format!("|{}\n", "---|".repeat(row.len()));
        }
    }
    out
}

fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::from("## Model summary (mean ± SD over folds)\n\n");
        out += &markdown(&self.summary_table);
        for (label, rows) in &self.class_tables {
            let _ = write!(out, "\n## {label}\n\n");
            out += &markdown(rows);
        }
        if !self.bland_altman.is_empty() {
            out += "\n## Bland-Altman (macro-F1 per fold)\n\n";
            out += "| A | B | bias | lower LoA | upper LoA |\n|---|---|---|---|---|\n";
            for b in &self.bland_altman {
                let _ = writeln!(
                    out,
                    "| {} | {} | {:.4} | {:.4} | {:.4} |",
                    b.model_a, b.model_b, b.bias, b.loa_low, b.loa_high
                );
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "\nnote: {n}");
        }
        out
    }

    /// Writes `summary_table.csv`, `per_class.csv`, `cv_macro_f1.csv`,
    /// `bland_altman.csv` (two or more runs) and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(&dir.join(SUMMARY_TABLE_CSV), &self.summary_table)?;

        let mut per_class = vec![vec![
            "Class".to_string(),
            "Model".into(),
            "Precision".into(),
            "Recall".into(),
            "F1".into(),
        ]];
        for (label, rows) in &self.class_tables {
            for r in &rows[1..] {
                let mut row = vec![label.name().to_string()];
                row.extend(r.iter().cloned());
                per_class.push(row);
            }
        }
        write_rows(&dir.join(PER_CLASS_CSV), &per_class)?;

        let mut dist = vec![vec!["model".to_string(), "fold".into(), "macro_f1".into()]];
        for r in &self.runs {
            for f in &r.folds {
                dist.push(vec![r.name.clone(), f.fold_idx.to_string(), f.macro_f1.to_string()]);
            }
        }
        write_rows(&dir.join(CV_MACRO_F1_CSV), &dist)?;

        if !self.bland_altman.is_empty() {
            write_bland_altman_csv(&dir.join(BLAND_ALTMAN_CSV), &self.bland_altman)?;
        }
        let md = dir.join(REPORT_MD);
        std::fs::write(&md, self.render()).map_err(|e| Error::io(&md, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_rows() {
        assert_eq!(row_name("neural-no-rdrop"), "- no R-Drop");
        assert_eq!(row_name("neural-no-focal"), "- no Focal");
        assert_eq!(row_name("neural"), "neural");
        assert_eq!(row_name("no-ls"), "no-ls");
    }

    fn ms(mean: f64) -> MeanSd {
        MeanSd { mean, sd: 0.01, n: 10 }
    }

    #[test]
    fn best_marker_once_per_column_with_ties_to_first() {
        let rows = vec![
            ("a".to_string(), vec![ms(0.8), ms(0.9)]),
            ("b".to_string(), vec![ms(0.85), ms(0.9)]),
            ("c".to_string(), vec![ms(0.85), ms(0.7)]),
        ];
        let t = table(&rows, &["Model", "X", "Y"]);
        for c in 1..3 {
            let marked: Vec<usize> = (1..t.len()).filter(|&r| t[r][c].starts_with(BEST_MARKER)).collect();
            assert_eq!(marked.len(), 1);
        }
        assert!(t[2][1].starts_with(BEST_MARKER));
        assert!(t[1][2].starts_with(BEST_MARKER));
        assert_eq!(
            cell(
                &MeanSd {
                    mean: 0.8364,
                    sd: 0.008,
                    n: 10
                },
                false
            ),
            ".836 ± .008"
        );
    }

    #[test]
    fn missing_artifacts_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let err = build_report(&[dir.path().to_path_buf()]).unwrap_err().to_string();
        assert!(err.contains("summary.json") && err.contains("config.json") && err.contains("foldplan.json"));
    }
}
