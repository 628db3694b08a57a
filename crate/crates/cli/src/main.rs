use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use kc_core::corpus::{ingest, stratified_kfold, Format};
use kc_core::runner::{
    build_report, compare_models, ensemble_predict, load_fold_models, run_cv, Ablation, CompareOptions, Correction,
    ExperimentConfig, ModelKind,
};
use kc_core::synthetic::{generate, SyntheticConfig};
use kc_core::KcLabel;

#[derive(Parser)]
#[command(
    name = "kc",
    version,
    about = "Knowledge-construction comment classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a labeled corpus.
    Ingest {
        file: PathBuf,
        /// csv or jsonl; inferred from the extension when omitted.
        #[arg(long)]
        format: Option<Format>,
        /// Write the normalized dataset as JSONL.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a stratified k-fold plan.
    Split {
        file: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        format: Option<Format>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate a model; writes a run directory under --out.
    Train {
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset path (overrides the config).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run name (overrides the config).
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        folds: Option<usize>,
        /// Loss ablation for neural runs: no-focal, no-ls or no-rdrop.
        #[arg(long)]
        ablate: Option<Ablation>,
    },
    /// Paired statistical comparison of runs sharing a fold plan.
    Compare {
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "holm")]
        correction: Correction,
        #[arg(long, default_value_t = 10_000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Summary tables and plot data for one or more runs.
    Report {
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Write a generated separable corpus as JSONL.
    Synth {
        #[arg(long, default_value_t = 800)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold-ensemble prediction from a run's checkpoints.
    Predict {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated subset of folds to ensemble.
        #[arg(long, value_delimiter = ',')]
        folds: Option<Vec<usize>>,
        #[arg(required = true, num_args = 1..)]
        text: Vec<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { file, format, out } => {
            let data = ingest(&file, format.unwrap_or_else(|| Format::from_path(&file)))?;
            println!("{} examples", data.len());
            for label in KcLabel::ALL {
                println!("  {:<10}{}", label.name(), data.count(label));
            }
            if let Some(out) = out {
                data.write_jsonl(&out)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Split {
            file,
            folds,
            seed,
            format,
            out,
        } => {
            let data = ingest(&file, format.unwrap_or_else(|| Format::from_path(&file)))?;
            let plan = stratified_kfold(&data, folds, seed)?;
            println!("fold\t{}", KcLabel::ALL.map(|l| l.name()).join("\t"));
            for (f, counts) in plan.fold_class_counts(&data).iter().enumerate() {
                let cells: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
                println!("{f}\t{}", cells.join("\t"));
            }
            println!("hash {}", plan.hash());
            if let Some(out) = out {
                plan.save(&out)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Train {
            model,
            config,
            data,
            out,
            name,
            seed,
            folds,
            ablate,
        } => {
            let cfg = train_config(model, config.as_deref(), data, out, name, seed, folds, ablate)?;
            let run = run_cv(&cfg).with_context(|| format!("run {} failed", cfg.run_dir().display()))?;
            let cv = &run.summary.cv;
            println!(
                "{}\taccuracy {}\tmacro-F1 {}\tweighted-F1 {}",
                run.summary.name,
                cv.accuracy.display3(),
                cv.macro_f1.display3(),
                cv.weighted_f1.display3()
            );
            println!("wrote {}", run.run_dir.display());
        }
        Command::Compare {
            runs,
            correction,
            bootstrap,
            seed,
            out,
        } => {
            let opts = CompareOptions {
                correction,
                bootstrap,
                seed,
                ..CompareOptions::default()
            };
            let report = compare_models(&runs, &opts)?;
            report.write(&out)?;
            print!("{}", report.render());
            println!("wrote {}", out.display());
        }
        Command::Report { runs, out } => {
            let report = build_report(&runs)?;
            report.write(&out)?;
            print!("{}", report.render());
            println!("wrote {}", out.display());
        }
        Command::Synth { n, seed, out } => {
            let data = generate(&SyntheticConfig {
                n_docs: n,
                seed,
                ..SyntheticConfig::default()
            })?;
            data.write_jsonl(&out)?;
            println!("wrote {} examples to {}", data.len(), out.display());
        }
        Command::Predict { run, folds, text } => {
            let models = load_fold_models(&run, folds.as_deref())?;
            for t in &text {
                let pred = ensemble_predict(&models, t)?;
                println!(
                    "{}",
                    serde_json::to_string(&serde_json::json!({
                        "text": t,
                        "label": pred.label,
                        "probabilities": pred.mean,
                        "n_models": pred.per_model.len(),
                    }))?
                );
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_config(
    model: Option<ModelKind>,
    config: Option<&Path>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    name: Option<String>,
    seed: Option<u64>,
    folds: Option<usize>,
    ablate: Option<Ablation>,
) -> Result<ExperimentConfig> {
    let mut cfg = match (config, model, &data) {
        (Some(path), _, _) => {
            ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?
        }
        (None, Some(m), Some(d)) => ExperimentConfig::new(m.as_str(), d.clone(), m),
        (None, _, _) => bail!("train needs --config, or both --model and --data"),
    };
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(d) = data {
        cfg.dataset = d;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(n) = name {
        cfg.name = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(f) = folds {
        cfg.n_folds = f;
    }
    if let Some(a) = ablate {
        if cfg.model != ModelKind::Neural {
            bail!("--ablate applies to neural runs only");
        }
        cfg = a.apply(&cfg);
        cfg.name = format!("{}-{}", cfg.name, a.as_str());
    }
    Ok(cfg)
}
