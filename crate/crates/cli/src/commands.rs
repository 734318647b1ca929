//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use paee_core::data_model::{
    align_recording, load_dataset, load_recording, met_band, mets_from_eem, write_dataset, MetBand,
    Recording,
};
use paee_core::eval::{
    run_experiment, train_validation_split, Architecture, ConfigReport, ConfigSummary,
    ExperimentConfig, ExperimentReport, FoldReport, ModelVariant, SubjectInfo,
};
use paee_core::nn::{init_params, load_model, save_model, HybridModel};
use paee_core::optim::{
    predict as predict_examples, train as train_model, write_training_log, TrainConfig,
};
use paee_core::preprocess::TARGET_BIN_SEC;
use paee_core::sequencing::{
    build_eval_set, build_grid_set, build_training_set, fit_normalizer, Normalizer, SequenceSpec,
};
use paee_core::synth::generate_dataset;
use serde_json::json;

use crate::config::RunConfig;

const MODEL_FILE: &str = "model.paee";

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join("resolved_config.txt"), cfg.to_string())?;
    Ok(&cfg.out)
}

fn prepare(rec: Recording) -> Result<Recording> {
    if rec.breaths.is_empty() {
        return Ok(rec);
    }
    align_recording(&rec).with_context(|| format!("aligning {}", rec.id))
}

fn dataset(cfg: &RunConfig) -> Result<Vec<Recording>> {
    let root = cfg
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("no dataset given (--data or `data =`)"))?;
    let recs = load_dataset(root).with_context(|| format!("loading {}", root.display()))?;
    if recs.is_empty() {
        bail!("no subject directories under {}", root.display());
    }
    recs.into_iter().map(prepare).collect()
}

fn first<T: Clone>(items: &[T], what: &str) -> T {
    if items.len() > 1 {
        log::warn!("several {what} values configured; using the first");
    }
    items[0].clone()
}

/// Hours spent in each MET band, from breath-to-breath intervals.
fn met_band_hours(recs: &[Recording]) -> [f64; 4] {
    let mut hours = [0.0; 4];
    for r in recs {
        let Some(p) = &r.profile else { continue };
        for w in r.breaths.windows(2) {
            if let Ok(band) = met_band(mets_from_eem(w[0].eem, p.weight_kg)) {
                let i = MetBand::ALL.iter().position(|b| *b == band).unwrap();
                hours[i] += (w[1].t - w[0].t) / 3600.0;
            }
        }
    }
    hours
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let recs = generate_dataset(&cfg.synth_config())?;
    write_dataset(out, &recs)?;
    let indoor = recs.iter().filter(|r| !r.has_outdoor()).count();
    let total_h: f64 = recs.iter().map(|r| r.duration() / 3600.0).sum();
    let mut s = String::new();
    writeln!(s, "subjects        {}", recs.len())?;
    writeln!(s, "indoor-only     {indoor}")?;
    writeln!(s, "recorded hours  {total_h:.2}")?;
    writeln!(s, "{:<12} {:>8}", "MET band", "hours")?;
    for (band, h) in MetBand::ALL.iter().zip(met_band_hours(&recs)) {
        writeln!(s, "{:<12} {h:>8.3}", band.name())?;
    }
    fs::write(out.join("summary.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn model_meta(
    cfg: &ExperimentConfig,
    normalizer: &Normalizer,
    validation: &[String],
    train_subjects: &[String],
    best_epoch: usize,
) -> serde_json::Value {
    json!({
        "variant": cfg.variant,
        "spec": cfg.spec,
        "arch": cfg.arch,
        "train": cfg.train,
        "normalizer": normalizer,
        "validation_subjects": validation,
        "train_subjects": train_subjects,
        "best_epoch": best_epoch,
    })
}

struct SavedModel {
    model: HybridModel,
    spec: SequenceSpec,
    variant: ModelVariant,
    normalizer: Normalizer,
    arch: Architecture,
    train: TrainConfig,
}

fn open_model(path: &Path) -> Result<SavedModel> {
    let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    let (model, meta) = load_model(std::io::BufReader::new(file))?;
    let field = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| anyhow!("model file lacks `{k}` metadata"))
    };
    Ok(SavedModel {
        spec: serde_json::from_value(field("spec")?)?,
        variant: serde_json::from_value(field("variant")?)?,
        normalizer: serde_json::from_value(field("normalizer")?)?,
        arch: serde_json::from_value(field("arch")?)?,
        train: serde_json::from_value(field("train")?)?,
        model,
    })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let recs = dataset(cfg)?;
    let exps = cfg.experiments()?;
    let exp = first(&exps, "sequence configuration");
    let (validation, train_ids) = train_validation_split(&SubjectInfo::of(&recs), cfg.seed)?;
    let by_id = |ids: &[String]| -> Vec<&Recording> {
        recs.iter().filter(|r| ids.contains(&r.id)).collect()
    };
    let train_recs = by_id(&train_ids);
    let val_recs = by_id(&validation);
    let spec = &exp.spec;
    let normalizer = fit_normalizer(&train_recs, spec)?;
    let mut train_set = Vec::new();
    for r in &train_recs {
        train_set.extend(build_training_set(r, spec, &normalizer)?.0);
    }
    let mut val_set = Vec::new();
    for r in &val_recs {
        val_set.extend(build_training_set(r, spec, &normalizer)?.0);
    }
    log::info!(
        "{}: {} training and {} validation examples",
        exp.label(),
        train_set.len(),
        val_set.len()
    );
    let model = init_params(exp.arch.model_config(spec), exp.model_seed)?;
    let outcome = train_model(model, &train_set, &val_set, &exp.train)?;
    write_training_log(
        File::create(out.join("training_log.csv"))?,
        &outcome.history,
    )?;
    let meta = model_meta(
        &exp,
        &normalizer,
        &validation,
        &train_ids,
        outcome.best_epoch,
    );
    let path = out.join(MODEL_FILE);
    save_model(BufWriter::new(File::create(&path)?), &outcome.model, &meta)?;
    println!(
        "saved {} (best epoch {}, {} parameters)",
        path.display(),
        outcome.best_epoch,
        outcome.model.parameter_count()
    );
    Ok(())
}

fn write_report(out: &Path, report: &ExperimentReport) -> Result<()> {
    report.write_csv(BufWriter::new(File::create(out.join("report.csv"))?))?;
    let text = format!("{}\n{}", report.summary_table(), report.window_table());
    fs::write(out.join("summary.txt"), &text)?;
    print!("{text}");
    if report.any_diverged() {
        bail!("one or more folds diverged (non-finite loss); see report.csv");
    }
    Ok(())
}

fn loso(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let recs = dataset(cfg)?;
    let report = run_experiment(&recs, &cfg.experiments()?, cfg.seed, cfg.workers)?;
    write_report(out, &report)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let Some(model_path) = &cfg.model else {
        return loso(cfg);
    };
    let saved = open_model(model_path)?;
    let out = out_dir(cfg)?;
    let recs = dataset(cfg)?;
    let mut folds = Vec::with_capacity(recs.len());
    for r in &recs {
        let (examples, _) = build_eval_set(r, &saved.spec, &saved.normalizer)
            .with_context(|| format!("subject {}", r.id))?;
        let pred = predict_examples(&saved.model, &examples, saved.train.micro_batch)?;
        folds.push(FoldReport::score(
            &r.id,
            r.has_outdoor(),
            &examples,
            &pred,
            0,
        )?);
    }
    let report = ExperimentReport {
        rows: vec![ConfigReport {
            config: ExperimentConfig {
                spec: saved.spec,
                variant: saved.variant,
                arch: saved.arch,
                train: saved.train,
                model_seed: saved.model.seed,
            },
            summary: ConfigSummary::of(&folds),
            folds,
            vs_baseline: None,
        }],
    };
    write_report(out, &report)
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    loso(cfg)
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let model_path = cfg
        .model
        .as_ref()
        .ok_or_else(|| anyhow!("no model given (--model)"))?;
    let dir: &PathBuf = cfg
        .recording
        .as_ref()
        .ok_or_else(|| anyhow!("no recording given (--recording)"))?;
    let saved = open_model(model_path)?;
    let rec = prepare(load_recording(dir).with_context(|| format!("loading {}", dir.display()))?)?;
    let out = out_dir(cfg)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    match cfg.window {
        None => {
            let (examples, _) = build_eval_set(&rec, &saved.spec, &saved.normalizer)?;
            let pred = predict_examples(&saved.model, &examples, saved.train.micro_batch)?;
            w.write_record(["t", "eem_true", "eem_pred"])?;
            for (e, p) in examples.iter().zip(&pred) {
                w.write_record([e.meta.t.to_string(), e.target.to_string(), p.to_string()])?;
            }
            println!("{} per-breath predictions", pred.len());
        }
        Some(width) => {
            if !(width > 0.0) {
                bail!("prediction window must be positive");
            }
            let step = TARGET_BIN_SEC.min(width);
            let examples = build_grid_set(&rec, &saved.spec, &saved.normalizer, step)?;
            let pred = predict_examples(&saved.model, &examples, saved.train.micro_batch)?;
            let n_windows = (rec.duration() / width).floor() as usize;
            w.write_record(["window_start", "window_end", "n", "eem_pred", "eem_true"])?;
            for k in 0..n_windows {
                let (a, b) = (k as f64 * width, (k + 1) as f64 * width);
                let mean = |it: &mut dyn Iterator<Item = f64>| {
                    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                    (n, (n > 0).then(|| s / n as f64))
                };
                let (n, p) = mean(
                    &mut examples
                        .iter()
                        .zip(&pred)
                        .filter(|(e, _)| e.meta.t >= a && e.meta.t < b)
                        .map(|(_, p)| *p),
                );
                let (_, t) = mean(
                    &mut rec
                        .breaths
                        .iter()
                        .filter(|br| br.t >= a && br.t < b)
                        .map(|br| br.eem),
                );
                let show = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                w.write_record([
                    a.to_string(),
                    b.to_string(),
                    n.to_string(),
                    show(p),
                    show(t),
                ])?;
            }
            println!("{n_windows} windows of {width} s");
        }
    }
    w.flush()?;
    Ok(())
}
