use std::fs;
use std::path::Path;

use lobsad::data::{
    generate_synthetic, load_labels, load_lob_csv, write_ground_truth, write_labels, write_lob_csv, Dataset,
    SchemaConfig,
};
use lobsad::eval::{compare_models, export_report, read_results_json, ModelKind, Split, TrialReport};
use lobsad::harness::{run_trials, write_scores, write_trial_artifacts, RunOptions, ScoringCheckpoint, TrainConfig};
use lobsad::{Error, Result};
use serde_json::json;

use crate::config::RunConfigFile;
use crate::{GenerateArgs, ReportArgs, RunArgs, ScoreArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = RunConfigFile::load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
    }
    let synth = generate_synthetic(&cfg.synth)?;
    create_dir(&args.out)?;
    write_lob_csv(args.out.join("lob.csv"), &synth.snapshots)?;
    write_labels(args.out.join("labels.txt"), synth.labeled_rows())?;
    write_ground_truth(args.out.join("ground_truth.csv"), &synth.ground_truth)?;
    log::info!(
        "wrote {} rows, {} injected anomaly rows ({} labeled) to {}",
        synth.snapshots.len(),
        synth.ground_truth.len(),
        synth.labeled_rows().len(),
        args.out.display()
    );
    Ok(())
}

/// The effective configuration after applying flags.
fn resolve_run_config(args: &RunArgs) -> Result<RunConfigFile> {
    let mut cfg = RunConfigFile::load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.train.mode = mode.into();
    }
    if args.paper_scale {
        let paper = TrainConfig::paper_scale();
        cfg.train.pretrain_epochs = paper.pretrain_epochs;
        cfg.train.main_epochs = paper.main_epochs;
    }
    if let Some(data) = &args.data {
        cfg.data.lob_csv = Some(data.clone());
    }
    if let Some(labels) = &args.labels {
        cfg.data.labels = Some(labels.clone());
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfigFile, out: &Path) -> Result<Dataset> {
    let schema = SchemaConfig::from_view(cfg.data.feature_view);
    match &cfg.data.lob_csv {
        Some(csv) => {
            let data = load_lob_csv(csv, &schema)?;
            match &cfg.data.labels {
                Some(labels) => load_labels(labels, data, cfg.data.label_key),
                None => {
                    log::warn!("no label file given; SAD will train without labels");
                    Ok(data)
                }
            }
        }
        None => {
            if cfg.data.labels.is_some() {
                return Err(Error::Config("a label file needs an order book CSV (--data)".into()));
            }
            let synth = generate_synthetic(&cfg.synth)?;
            write_ground_truth(out.join("ground_truth.csv"), &synth.ground_truth)?;
            synth.features_for(&schema)
        }
    }
}

pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = resolve_run_config(args)?;
    create_dir(&args.out)?;
    let dataset = load_dataset(&cfg, &args.out)?;
    log::info!(
        "{} rows, {} labeled; {} repeats x {} folds",
        dataset.n_rows(),
        dataset.n_labeled(),
        cfg.train.repeats,
        cfg.train.folds
    );

    let outcomes = run_trials(
        &dataset,
        &cfg.train,
        &RunOptions {
            jobs: args.jobs,
            probe: None,
        },
    )?;

    // completed trials are written even when others failed
    let ckpt_dir = args.out.join("checkpoints");
    let mut reports = Vec::new();
    let mut scatter = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(result) => {
                write_trial_artifacts(&result, &ckpt_dir)?;
                reports.push(result.report);
                scatter.extend(result.scatter);
            }
            Err(e) => {
                failures.push(json!({ "trial": i + 1, "error": e.to_string() }));
                first_error.get_or_insert(e);
            }
        }
    }
    export_report(&reports, &scatter, &args.out)?;
    let manifest = json!({
        "tool": "lobsad",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "jobs": args.jobs,
        "n_rows": dataset.n_rows(),
        "n_labeled": dataset.n_labeled(),
        "provenance": format!("{:?}", dataset.provenance()),
        "trials": reports.iter().map(|r| json!({
            "trial": r.trial, "repeat": r.repeat, "fold": r.fold, "seed": r.seed,
        })).collect::<Vec<_>>(),
        "failed": failures,
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;

    if let Some(e) = first_error {
        return Err(e);
    }
    print_summary(&reports);
    Ok(())
}

fn print_summary(reports: &[TrialReport]) {
    println!("trial  model  ratio_train  ratio_test  rank_train  rank_test");
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"));
    for r in reports {
        for m in &r.models {
            println!(
                "{:>5}  {:<5}  {:>11}  {:>10}  {:>10}  {:>9}",
                r.trial,
                m.model,
                fmt(m.ratio(Split::Train)),
                fmt(m.ratio(Split::Test)),
                fmt(m.rank(Split::Train)),
                fmt(m.rank(Split::Test)),
            );
        }
    }
    let both = reports
        .iter()
        .any(|r| r.metrics(ModelKind::Svdd).is_some() && r.metrics(ModelKind::Sad).is_some());
    if both {
        for split in [Split::Train, Split::Test] {
            let c = compare_models(reports, split);
            println!(
                "{split}: SAD ratio >= SVDD in {}/{} trials, rank <= in {}/{}, both in {}/{}; mean ratio {:.3} vs {:.3}, mean rank {:.2} vs {:.2}",
                c.ratio_wins, c.trials, c.rank_wins, c.trials, c.joint_wins, c.trials,
                c.mean_ratio_sad, c.mean_ratio_svdd, c.mean_rank_sad, c.mean_rank_svdd
            );
        }
    }
}

/// Fails with the expected and actual feature counts when the CSV header
/// lacks any of the checkpoint's feature columns.
fn check_columns(path: &Path, schema: &SchemaConfig) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let Some(header) = text.lines().next().filter(|l| !l.trim().is_empty()) else {
        return Ok(());
    };
    let present: Vec<&str> = header.split(',').map(str::trim).collect();
    let missing: Vec<&String> = schema
        .feature_columns
        .iter()
        .filter(|c| !present.contains(&c.as_str()))
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let expected = schema.feature_columns.len();
    Err(Error::Shape(format!(
        "{}: checkpoint expects {expected} feature columns, data provides {} (missing {missing:?})",
        path.display(),
        expected - missing.len()
    )))
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let ckpt = ScoringCheckpoint::load(&args.checkpoint)?;
    check_columns(&args.data, &ckpt.schema)?;
    let data = load_lob_csv(&args.data, &ckpt.schema)?;
    let scores = ckpt.score(data.view())?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_scores(&args.out, scores.into_iter().enumerate())?;
    log::info!("scored {} rows", data.n_rows());
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let reports = read_results_json(args.out.join("results.json"))?;
    if reports.is_empty() {
        return Err(Error::Data(format!("{}: no completed trials", args.out.display())));
    }
    print_summary(&reports);
    Ok(())
}
