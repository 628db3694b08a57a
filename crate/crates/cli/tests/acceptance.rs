//! Acceptance checks: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use kc_core::corpus::{stratified_kfold, Dataset, LabeledExample};
use kc_core::evalstats::{
    bland_altman, cohens_d_paired, compute_metrics, format_p, friedman_test, holm_correction, paired_t_test,
    wilcoxon_signed_rank,
};
use kc_core::neural::{
    focal_ls_loss, rdrop_loss, tokenize, total_loss, CompositeLossConfig, Encoder, EncoderConfig, Pooling,
};
use kc_core::runner::{compare_summaries, CompareOptions, RunSummary, SUMMARY_FILE, SUMMARY_TABLE_CSV};
use kc_core::{softmax, KcLabel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances.
const CE_TOL: f64 = 1e-12;
const C1_BUDGET: Duration = Duration::from_secs(1);
const HAND_VALUE: f64 = 0.77977;
const HAND_TOL: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_MODELS: u64 = 24;
const C3_BUDGET: Duration = Duration::from_secs(10);
const RD_TOL: f64 = 1e-9;
const P_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-12;
const LINEAR_MIN_F1: f64 = 0.95;
const NEURAL_MIN_F1: f64 = 0.90;
const RUN_BUDGET: Duration = Duration::from_secs(180);

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_simplex(rng: &mut ChaCha8Rng) -> [f64; 4] {
    softmax(&[(); 4].map(|_| rng.random_range(-8.0..8.0)))
}

fn loss_cfg(gamma: f64, epsilon: f64, lambda_rd: f64) -> CompositeLossConfig {
    CompositeLossConfig {
        gamma,
        epsilon,
        lambda_rd,
        ..CompositeLossConfig::default()
    }
}

fn c1_cross_entropy() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = random_simplex(&mut rng);
        let y = KcLabel::ALL[rng.random_range(0..4)];
        let fl = focal_ls_loss(&p, y, &loss_cfg(0.0, 0.0, 0.0)).map_err(|e| e.to_string())?;
        worst = worst.max((fl + p[y.index()].ln()).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst < CE_TOL, format!("max |FL - CE| = {worst:e}"))?;
    ensure(elapsed < C1_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("max |FL - CE| = {worst:.1e} over 1000 points in {elapsed:.2?}"))
}

fn c2_hand_value() -> Outcome {
    let l = focal_ls_loss(&[0.25; 4], KcLabel::Share, &loss_cfg(2.0, 0.05, 0.0)).map_err(|e| e.to_string())?;
    let closed_form = 0.5625 * 4f64.ln();
    ensure(
        (l - closed_form).abs() < 1e-15,
        format!("loss {l} vs 0.5625 ln 4 = {closed_form}"),
    )?;
    let gap = (l - HAND_VALUE).abs();
    let note = if gap < HAND_TOL {
        String::new()
    } else {
        // (1 - 1/4)^2 * -ln(0.95/4 + 0.05/4) = 0.5625 ln 4 = 0.7797905781...
        format!("; listed {HAND_VALUE} is off by {gap:.2e} (> {HAND_TOL:e}), the exact value rounds to 0.77979")
    };
    Ok(format!("loss = {l:.10} = 0.5625 ln 4{note}"))
}

#[allow(clippy::needless_range_loop)]
fn gradient_check(model: &Encoder, batch: &[(&[u32], KcLabel)], loss: &CompositeLossConfig, seed: u64) -> f64 {
    let eval = |m: &Encoder| total_loss(m, batch, loss, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let analytic = eval(model).grad;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = eval(&probe).loss;
        probe.params[i] = orig - h;
        let down = eval(&probe).loss;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = ["a", "b", "c", "d", "e", "f", "g"];
    let mut worst = 0.0f64;
    for trial in 0..GRAD_MODELS {
        let enc = EncoderConfig {
            vocab_size: 12,
            embed_dim: 8,
            max_seq_len: rng.random_range(3..7),
            dropout_rate: rng.random_range(0.05..0.5),
            pooling: if trial % 2 == 0 {
                Pooling::Mean
            } else {
                Pooling::ClsToken
            },
        };
        let model = Encoder::new(enc, trial).map_err(|e| e.to_string())?;
        let mut text = || {
            let n = rng.random_range(1..6);
            (0..n)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let (t1, t2) = (tokenize(&text(), &enc), tokenize(&text(), &enc));
        let batch = [
            (&t1[..], KcLabel::ALL[rng.random_range(0..4)]),
            (&t2[..], KcLabel::ALL[rng.random_range(0..4)]),
        ];
        let loss = loss_cfg(
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..0.2),
            rng.random_range(0.0..2.0),
        );
        worst = worst.max(gradient_check(&model, &batch, &loss, trial));
    }
    let elapsed = start.elapsed();
    ensure(worst < GRAD_TOL, format!("max relative error {worst:e}"))?;
    ensure(elapsed < C3_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "max relative error {worst:.1e} over {GRAD_MODELS} models in {elapsed:.2?}"
    ))
}

fn c4_rdrop() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let (p, q) = (random_simplex(&mut rng), random_simplex(&mut rng));
        let pq = rdrop_loss(&p, &q).map_err(|e| e.to_string())?;
        let qp = rdrop_loss(&q, &p).map_err(|e| e.to_string())?;
        let pp = rdrop_loss(&p, &p).map_err(|e| e.to_string())?;
        ensure((pq - qp).abs() <= RD_TOL, format!("pair {i}: asymmetric {pq} vs {qp}"))?;
        ensure(pq >= -RD_TOL, format!("pair {i}: negative {pq}"))?;
        ensure(pp.abs() <= RD_TOL, format!("pair {i}: RD(p, p) = {pp}"))?;
        let gap = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(gap < 1e-6 || pq > RD_TOL, format!("pair {i}: distinct but RD = {pq}"))?;
    }

    let tokens: Vec<u32> = vec![1, 5, 9, 2];
    let batch = [(&tokens[..], KcLabel::Explore)];
    let enc = |dropout_rate| EncoderConfig {
        vocab_size: 16,
        embed_dim: 6,
        max_seq_len: 8,
        dropout_rate,
        pooling: Pooling::Mean,
    };
    let model = Encoder::new(enc(0.3), 1).map_err(|e| e.to_string())?;
    let out = total_loss(
        &model,
        &batch,
        &loss_cfg(2.0, 0.05, 0.0),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .map_err(|e| e.to_string())?;
    ensure(
        out.loss == out.focal,
        format!("lambda 0: loss {} != focal {}", out.loss, out.focal),
    )?;
    let model = Encoder::new(enc(0.0), 1).map_err(|e| e.to_string())?;
    let out = total_loss(
        &model,
        &batch,
        &loss_cfg(2.0, 0.05, 1.0),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .map_err(|e| e.to_string())?;
    ensure(out.rdrop == 0.0, format!("dropout 0: RD = {}", out.rdrop))?;
    ensure(out.loss == out.focal, "dropout 0: loss != focal")?;
    Ok("1000 pairs symmetric, nonnegative, zero iff equal; both degeneracies exact".into())
}

fn enumerate_wilcoxon_p(d: &[f64]) -> f64 {
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&v| {
            let below = abs.iter().filter(|&&x| x < v).count() as f64;
            let equal = abs.iter().filter(|&&x| x == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let w_obs = w_plus.min(total - w_plus);
    let n = d.len();
    let hits = (0u64..1 << n)
        .filter(|mask| {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            s.min(total - s) <= w_obs + 1e-9
        })
        .count();
    (hits as f64 / (1u64 << n) as f64).min(1.0)
}

fn c5_wilcoxon() -> Outcome {
    let a: Vec<f64> = (0..10).map(|i| 0.80 + 0.004 * i as f64).collect();
    let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x - 0.002 * (i + 1) as f64).collect();
    let r = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
    ensure((r.p_value - 0.001953125).abs() < P_TOL, format!("p = {}", r.p_value))?;
    ensure(
        format_p(r.p_value) == "0.0020",
        format!("displayed {}", format_p(r.p_value)),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for n in 1..=12 {
        for _ in 0..20 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|&x| x != 0.0).collect();
            if d.is_empty() {
                continue;
            }
            let p = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?.p_value;
            let oracle = enumerate_wilcoxon_p(&d);
            ensure(
                (p - oracle).abs() < P_TOL,
                format!("n={n}: {p} vs enumeration {oracle}"),
            )?;
            checked += 1;
        }
    }
    Ok(format!(
        "p = {} shown as 0.0020; {checked} tied/untied cases n<=12 match enumeration",
        r.p_value
    ))
}

fn c6_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for set in 0..100 {
        let n = rng.random_range(1..=50);
        let truth: Vec<KcLabel> = (0..n).map(|_| KcLabel::ALL[rng.random_range(0..4)]).collect();
        let pred: Vec<KcLabel> = (0..n).map(|_| KcLabel::ALL[rng.random_range(0..4)]).collect();
        let (m, _) = compute_metrics(&truth, &pred).map_err(|e| e.to_string())?;
        let mut f1s = Vec::new();
        for k in KcLabel::ALL {
            let count = |f: &dyn Fn(KcLabel, KcLabel) -> bool| {
                truth.iter().zip(&pred).filter(|(t, p)| f(**t, **p)).count() as f64
            };
            let tp = count(&|t, p| t == k && p == k);
            let fp = count(&|t, p| t != k && p == k);
            let fn_ = count(&|t, p| t == k && p != k);
            let f1 = if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            };
            ensure(
                (m.per_class[k.index()].f1 - f1).abs() < METRIC_TOL,
                format!("set {set} class {k}: {} vs {f1}", m.per_class[k.index()].f1),
            )?;
            if tp + fp + fn_ > 0.0 {
                f1s.push(m.per_class[k.index()].f1);
            }
        }
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        ensure(
            m.macro_f1 == mean,
            format!("set {set}: macro {} != mean {mean}", m.macro_f1),
        )?;
    }
    for _ in 0..20 {
        let truth: Vec<KcLabel> = (0..40).map(|i| KcLabel::ALL[i % 4]).collect();
        let pred: Vec<KcLabel> = (0..40).map(|_| KcLabel::ALL[rng.random_range(0..4)]).collect();
        let (m, _) = compute_metrics(&truth, &pred).map_err(|e| e.to_string())?;
        ensure(
            (m.weighted_f1 - m.macro_f1).abs() < METRIC_TOL,
            "weighted != macro on balanced truth",
        )?;
    }
    Ok("100 random sets match the TP/FP/FN counter; macro exact; weighted == macro when balanced".into())
}

fn c7_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.random_range(3..30);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = paired_t_test(&a, &b).map_err(|e| e.to_string())?.t;
        let d = cohens_d_paired(&a, &b).map_err(|e| e.to_string())?;
        ensure(
            (t - d * (n as f64).sqrt()).abs() < 1e-9 * t.abs().max(1.0),
            format!("t {t} vs d sqrt n"),
        )?;
        let ps: Vec<f64> = (0..rng.random_range(1..10))
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        ensure(
            holm_correction(&ps).iter().zip(&ps).all(|(q, p)| q >= p),
            "Holm below raw p",
        )?;
    }

    let folds: Vec<f64> = (0..10).map(|i| 0.8 + 0.005 * i as f64).collect();
    let rows: Vec<Vec<f64>> = folds.iter().map(|&f| vec![f; 3]).collect();
    let fr = friedman_test(&rows).map_err(|e| e.to_string())?;
    ensure(fr.chi2 == 0.0, format!("Friedman chi2 {}", fr.chi2))?;
    let summaries: Vec<RunSummary> = ["a", "b", "c"]
        .iter()
        .map(|name| fake_summary(name, &folds))
        .collect::<Result<_, _>>()?;
    let opts = CompareOptions {
        bootstrap: 200,
        ..CompareOptions::default()
    };
    let report = compare_summaries(&summaries, &opts).map_err(|e| e.to_string())?;
    ensure(
        report
            .pairwise
            .iter()
            .all(|p| p.p_t_adjusted == 1.0 && p.p_wilcoxon_adjusted == 1.0),
        "adjusted p != 1 for identical models",
    )?;
    let ba = bland_altman(&folds, &folds).map_err(|e| e.to_string())?;
    ensure(
        (ba.bias, ba.loa_low, ba.loa_high) == (0.0, 0.0, 0.0),
        "Bland-Altman of identical series",
    )?;
    Ok("t = d sqrt n, Holm >= raw, identical models give chi2 0 / adjusted p 1 / BA (0, 0, 0)".into())
}

/// A run summary whose per-fold macro-F1 values are `folds`.
fn fake_summary(name: &str, folds: &[f64]) -> Result<RunSummary, String> {
    let truth: Vec<KcLabel> = (0..8).map(|i| KcLabel::ALL[i % 4]).collect();
    let (metrics, _) = compute_metrics(&truth, &truth).map_err(|e| e.to_string())?;
    let per_fold: Vec<_> = folds
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let mut m = metrics.clone();
            m.fold_idx = i;
            m.macro_f1 = f;
            m
        })
        .collect();
    Ok(RunSummary {
        name: name.into(),
        model: kc_core::runner::ModelKind::TfIdfLr,
        n_folds: folds.len(),
        seed: 0,
        n_examples: 8 * folds.len(),
        fold_plan_hash: "shared".into(),
        cv: kc_core::evalstats::aggregate_cv(&per_fold).map_err(|e| e.to_string())?,
        folds: per_fold,
        best_epochs: None,
    })
}

fn c8_stratification() -> Outcome {
    let examples: Vec<LabeledExample> = (0..20_000)
        .map(|i| LabeledExample::new(format!("c{i}"), "text", KcLabel::ALL[i % 4]))
        .collect();
    let data = Dataset::new(examples.clone()).map_err(|e| e.to_string())?;
    let plan = stratified_kfold(&data, 10, 0).map_err(|e| e.to_string())?;
    ensure(
        plan.fold_class_counts(&data).iter().all(|c| *c == [500; 4]),
        "fold counts differ from 500",
    )?;
    let mut shuffled = examples;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
    let data = Dataset::new(shuffled).map_err(|e| e.to_string())?;
    let plan = stratified_kfold(&data, 10, 0).map_err(|e| e.to_string())?;
    ensure(
        plan.fold_class_counts(&data).iter().all(|c| *c == [500; 4]),
        "permuted input breaks counts",
    )?;
    Ok("10 folds x 4 classes x 500, also after permuting the input".into())
}

struct Cli {
    work: PathBuf,
}

impl Cli {
    fn run(&self, args: &[&str]) -> Result<Duration, String> {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_kc"))
            .args(args)
            .current_dir(&self.work)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "kc {}: {}",
                args.join(" "),
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        Ok(start.elapsed())
    }

    fn macro_f1(&self, run: &Path) -> Result<f64, String> {
        RunSummary::load(&self.work.join(run))
            .map(|s| s.cv.macro_f1.mean)
            .map_err(|e| e.to_string())
    }
}

fn c9_end_to_end(cli: &Cli) -> Outcome {
    cli.run(&["synth", "--n", "800", "--seed", "7", "--out", "synth.jsonl"])?;
    let train = |model: &str, out: &str, extra: &[&str]| {
        let mut args = vec![
            "train",
            "--model",
            model,
            "--data",
            "synth.jsonl",
            "--out",
            out,
            "--seed",
            "0",
        ];
        args.extend_from_slice(extra);
        cli.run(&args)
    };
    let lr_time = train("tfidf-lr", "runs", &[])?;
    let lr_f1 = cli.macro_f1(Path::new("runs/tfidf-lr"))?;
    ensure(lr_f1 >= LINEAR_MIN_F1, format!("tfidf-lr macro-F1 {lr_f1}"))?;
    ensure(lr_time < RUN_BUDGET, format!("tfidf-lr took {lr_time:?}"))?;

    let nn_time = train("neural", "runs", &[])?;
    let nn_f1 = cli.macro_f1(Path::new("runs/neural"))?;
    ensure(nn_f1 >= NEURAL_MIN_F1, format!("neural macro-F1 {nn_f1}"))?;
    ensure(nn_time < RUN_BUDGET, format!("neural took {nn_time:?}"))?;

    let mut runs = vec!["runs/tfidf-lr".to_string(), "runs/neural".to_string()];
    for ablation in ["no-rdrop", "no-ls", "no-focal"] {
        train("neural", "runs", &["--ablate", ablation])?;
        runs.push(format!("runs/neural-{ablation}"));
    }
    let mut args = vec!["report"];
    args.extend(runs.iter().map(String::as_str));
    args.extend(["--out", "report"]);
    cli.run(&args)?;
    let table = std::fs::read_to_string(cli.work.join("report").join(SUMMARY_TABLE_CSV)).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = table.lines().collect();
    ensure(
        lines.first() == Some(&"Model,Accuracy,Macro-F1,Weighted-F1"),
        "summary table header",
    )?;
    for label in ["- no R-Drop", "- no LS", "- no Focal"] {
        let row = lines
            .iter()
            .find(|l| l.starts_with(label))
            .ok_or(format!("no row {label}"))?;
        ensure(
            row.matches('±').count() == 3,
            format!("row {row:?} lacks mean ± SD cells"),
        )?;
    }
    ensure(lines.len() == 6, format!("{} table rows", lines.len() - 1))?;
    Ok(format!(
        "tfidf-lr {lr_f1:.3} in {lr_time:.1?}, neural {nn_f1:.3} in {nn_time:.1?}; 3 ablation rows in the summary table"
    ))
}

fn c10_determinism(cli: &Cli) -> Outcome {
    for model in ["tfidf-lr", "neural"] {
        cli.run(&[
            "train",
            "--model",
            model,
            "--data",
            "synth.jsonl",
            "--out",
            "rerun",
            "--seed",
            "0",
        ])?;
        let read =
            |dir: &str| std::fs::read(cli.work.join(dir).join(model).join(SUMMARY_FILE)).map_err(|e| e.to_string());
        ensure(
            read("runs")? == read("rerun")?,
            format!("{model} summary.json differs on rerun"),
        )?;
    }
    Ok("summary.json byte-identical on rerun for tfidf-lr and neural".into())
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let cli = Cli {
        work: work.path().to_path_buf(),
    };
    let criteria: Vec<Criterion> = vec![
        ("C1 focal reduces to cross-entropy", Box::new(c1_cross_entropy)),
        ("C2 focal hand value", Box::new(c2_hand_value)),
        ("C3 composite gradient check", Box::new(c3_gradients)),
        ("C4 R-Drop properties", Box::new(c4_rdrop)),
        ("C5 Wilcoxon exact p", Box::new(c5_wilcoxon)),
        ("C6 metric oracle", Box::new(c6_metrics)),
        ("C7 statistics identities", Box::new(c7_statistics)),
        ("C8 stratification 4x5000", Box::new(c8_stratification)),
        ("C9 end-to-end synthetic runs", Box::new(|| c9_end_to_end(&cli))),
        ("C10 determinism", Box::new(|| c10_determinism(&cli))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
