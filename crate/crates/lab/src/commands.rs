//! Subcommand implementations. Each writes its artifacts under `out` and
//! returns the JSON summary it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use npclab_core::data::{generate_dataset, SyntheticDataset};
use npclab_core::eval::tar_at_far;
use npclab_core::gradcheck::{compare_model, freeze_auxiliaries, model_analytic_gradients, model_numeric_gradients};
use npclab_core::hardness::{compute_mask_with, cosine_histogram, hard_negative_similarities, overlap_rate};
use npclab_core::loss::PositiveMargin;
use npclab_core::model::{Activation, Mlp, ModelSpec};
use npclab_core::seed::{derive, named_rng};
use npclab_core::train::{
    diagnose, evaluate_model, init_class_weights, train_on, EpochRecord, ExperimentConfig, TrainObserver, TrainedModel,
    TrainingLog,
};
use npclab_core::{cosine_matrix, Labels, LossConfig, LossVariant, Matrix, UnitRows};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::config::{LabConfig, VariantSpec};
use crate::error::{from_train, LabError, Result};
use crate::output::*;

/// Relative error below which `gradcheck` exits 0.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Finite-difference step used by `gradcheck`.
pub const GRADCHECK_EPSILON: f64 = 1e-4;

struct Progress<'a> {
    label: &'a str,
    total: usize,
    quiet: bool,
}

impl TrainObserver for Progress<'_> {
    fn on_epoch(&mut self, r: &EpochRecord, _model: &Mlp, _w: &Matrix) {
        if !self.quiet {
            eprintln!(
                "[{}] epoch {}/{} lr {} loss {:.4} acc {:.4}",
                self.label, r.epoch, self.total, r.lr, r.mean_loss, r.train_accuracy
            );
        }
    }
}

enum Outcome {
    Trained(TrainedModel),
    Diverged {
        iteration: usize,
        epoch: usize,
        log: TrainingLog,
    },
}

fn run_training(cfg: &ExperimentConfig, data: &SyntheticDataset, label: &str, quiet: bool) -> Result<Outcome> {
    let mut progress = Progress {
        label,
        total: cfg.schedule.total_epochs,
        quiet,
    };
    match train_on(cfg, data, &mut progress) {
        Ok(t) => Ok(Outcome::Trained(t)),
        Err(e) => {
            let (iteration, epoch, log) = from_train(e)?;
            Ok(Outcome::Diverged { iteration, epoch, log })
        }
    }
}

pub fn train(cfg: &LabConfig, out: &Path, quiet: bool) -> Result<Value> {
    let start = Instant::now();
    create_dir(out)?;
    let exp = &cfg.experiment;
    let data = generate_dataset(&exp.dataset)?;
    match run_training(exp, &data, exp.loss.variant.name(), quiet)? {
        Outcome::Trained(t) => {
            write_loss_csv(out.join("loss.csv"), &t.log)?;
            write_diagnostics_csv(out.join("diagnostics.csv"), &t.log)?;
            Checkpoint {
                model: t.model.clone(),
                class_weights: t.class_weights.clone(),
                epochs: t.log.epochs.len(),
                seed: exp.seed,
                variant: exp.loss.variant.name().to_string(),
            }
            .save(&out.join("checkpoint.txt"))?;
            let report = evaluate_model(&t.model, exp)?;
            let body = json!({
                "metrics": eval_json(&report),
                "epochs": t.log.epochs.iter().map(epoch_json).collect::<Vec<_>>(),
                "iterations": t.log.iterations.len(),
            });
            let s = summary("train", "ok", &cfg.raw, exp.seed, body, start.elapsed());
            write_json(out.join("summary.json"), &s)?;
            Ok(s)
        }
        Outcome::Diverged { iteration, epoch, log } => {
            write_loss_csv(out.join("loss.csv"), &log)?;
            write_diagnostics_csv(out.join("diagnostics.csv"), &log)?;
            let body = json!({
                "diverged_at": { "iteration": iteration, "epoch": epoch },
                "epochs": log.epochs.iter().map(epoch_json).collect::<Vec<_>>(),
                "iterations": log.iterations.len(),
            });
            let s = summary("train", "diverged", &cfg.raw, exp.seed, body, start.elapsed());
            write_json(out.join("summary.json"), &s)?;
            Err(LabError::Diverged {
                iteration,
                epoch,
                out: out.to_path_buf(),
            })
        }
    }
}

fn check_compatible(ck: &Checkpoint, exp: &ExperimentConfig) -> Result<()> {
    if ck.model.input_dim() != exp.dataset.input_dim {
        return Err(LabError::Config(format!(
            "checkpoint expects input_dim {}, config has {}",
            ck.model.input_dim(),
            exp.dataset.input_dim
        )));
    }
    Ok(())
}

pub fn evaluate(cfg: &LabConfig, checkpoint: &Path, out: &Path) -> Result<Value> {
    let start = Instant::now();
    create_dir(out)?;
    let ck = Checkpoint::load(checkpoint)?;
    check_compatible(&ck, &cfg.experiment)?;
    let report = evaluate_model(&ck.model, &cfg.experiment)?;
    write_roc_csv(out.join("roc.csv"), &report)?;
    let body = json!({
        "checkpoint": checkpoint.display().to_string(),
        "metrics": eval_json(&report),
    });
    let s = summary("evaluate", "ok", &cfg.raw, cfg.experiment.seed, body, start.elapsed());
    write_json(out.join("evaluation.json"), &s)?;
    Ok(s)
}

/// One row of a comparison or sweep table.
struct TableRow {
    label: String,
    loss: LossConfig,
    /// `(iteration, epoch)` of the first non-finite loss.
    diverged: Option<(usize, usize)>,
    first_loss: Option<f64>,
    final_loss: Option<f64>,
    train_accuracy: Option<f64>,
    tars: Option<[f64; 3]>,
    rank1: Option<f64>,
    pair_accuracy: Option<f64>,
    json: Value,
}

fn table_row(label: String, exp: &ExperimentConfig, data: &SyntheticDataset, quiet: bool) -> Result<TableRow> {
    let outcome = run_training(exp, data, &label, quiet)?;
    let (log, trained, diverged) = match outcome {
        Outcome::Trained(t) => (t.log.clone(), Some(t), None),
        Outcome::Diverged { iteration, epoch, log } => (log, None, Some((iteration, epoch))),
    };
    let first_loss = log.epochs.first().map(|e| e.mean_loss);
    let last = log.epochs.last();
    let mut row = TableRow {
        label: label.clone(),
        loss: exp.loss,
        diverged,
        first_loss,
        final_loss: last.map(|e| e.mean_loss),
        train_accuracy: last.map(|e| e.train_accuracy).filter(|a| a.is_finite()),
        tars: None,
        rank1: None,
        pair_accuracy: None,
        json: json!({
            "label": label,
            "diverged": true,
            "diverged_at": diverged.map(|(iteration, epoch)| json!({ "iteration": iteration, "epoch": epoch })),
        }),
    };
    if let Some(t) = trained {
        let report = evaluate_model(&t.model, exp)?;
        let mut tars = [0.0; 3];
        for (slot, far) in tars.iter_mut().zip(TABLE_FARS) {
            *slot = tar_at_far(&report.roc, far)?.tar;
        }
        row.tars = Some(tars);
        row.rank1 = Some(report.identification.rank1_accuracy);
        row.pair_accuracy = Some(report.pair_accuracy.mean_accuracy);
        row.json = json!({
            "label": label,
            "diverged": false,
            "metrics": eval_json(&report),
            "epochs": t.log.epochs.iter().map(epoch_json).collect::<Vec<_>>(),
        });
    }
    Ok(row)
}

fn write_table(path: PathBuf, rows: &[TableRow], extra: Option<(&str, &[String])>) -> Result<PathBuf> {
    let mut header: Vec<&str> = Vec::new();
    if let Some((name, _)) = extra {
        header.push(name);
    }
    header.extend(TABLE_HEADER);
    let mut t = Table::create(path, &header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut fields = Vec::new();
        if let Some((_, values)) = extra {
            fields.push(values[i].clone());
        }
        let l = &r.loss;
        fields.extend([
            r.label.clone(),
            l.variant.name().to_string(),
            fmt_f64(l.s),
            fmt_f64(l.m),
            fmt_f64(l.t),
            fmt_f64(l.alpha),
            fmt_f64(l.m0),
            fmt_f64(l.m1),
            r.diverged.is_some().to_string(),
            fmt_opt(r.first_loss),
            fmt_opt(r.final_loss),
            fmt_opt(r.train_accuracy),
        ]);
        for k in 0..3 {
            fields.push(fmt_opt(r.tars.map(|t| t[k])));
        }
        fields.push(fmt_opt(r.rank1));
        fields.push(fmt_opt(r.pair_accuracy));
        t.row(fields)?;
    }
    t.finish()
}

fn first_divergence(rows: &[TableRow], out: &Path) -> Result<()> {
    match rows.iter().find_map(|r| r.diverged) {
        Some((iteration, epoch)) => Err(LabError::Diverged {
            iteration,
            epoch,
            out: out.to_path_buf(),
        }),
        None => Ok(()),
    }
}

pub fn compare(cfg: &LabConfig, variants: &[String], out: &Path, quiet: bool) -> Result<Value> {
    let start = Instant::now();
    if variants.len() < 2 {
        return Err(LabError::Config("compare needs at least two variants".into()));
    }
    let specs = variants
        .iter()
        .map(|v| VariantSpec::parse(v, cfg.experiment.loss.s))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let data = generate_dataset(&cfg.experiment.dataset)?;
    let mut rows = Vec::new();
    for spec in specs {
        let mut exp = cfg.experiment.clone();
        exp.loss = spec.loss;
        rows.push(table_row(spec.label, &exp, &data, quiet)?);
    }
    write_table(out.join("compare.csv"), &rows, None)?;
    let body = json!({ "rows": rows.iter().map(|r| r.json.clone()).collect::<Vec<_>>() });
    let status = if rows.iter().any(|r| r.diverged.is_some()) {
        "diverged"
    } else {
        "ok"
    };
    let s = summary("compare", status, &cfg.raw, cfg.experiment.seed, body, start.elapsed());
    write_json(out.join("compare.json"), &s)?;
    first_divergence(&rows, out)?;
    Ok(s)
}

/// Trains once per value of `param`; divergence is recorded in the table
/// rather than aborting the sweep.
pub fn sweep(cfg: &LabConfig, param: &str, values: &[String], out: &Path, quiet: bool) -> Result<Value> {
    let start = Instant::now();
    if values.is_empty() {
        return Err(LabError::Config("sweep needs at least one value".into()));
    }
    if param == "seed" || param.starts_with("dataset.") || param == "output_dir" {
        return Err(LabError::Config(format!(
            "`{param}` cannot be swept; runs must share their data"
        )));
    }
    let mut configs = Vec::new();
    for v in values {
        let mut c = cfg.clone();
        c.set(param, v).map_err(|m| LabError::Config(format!("{param}: {m}")))?;
        c.finalize();
        c.experiment
            .validate()
            .map_err(|e| LabError::Config(format!("{param} = {v}: {e}")))?;
        configs.push(c);
    }
    create_dir(out)?;
    let data = generate_dataset(&cfg.experiment.dataset)?;
    let mut rows = Vec::new();
    for (c, v) in configs.iter().zip(values) {
        rows.push(table_row(format!("{param}={v}"), &c.experiment, &data, quiet)?);
    }
    write_table(out.join("sweep.csv"), &rows, Some(("value", values)))?;
    let body = json!({
        "param": param,
        "rows": rows.iter().map(|r| r.json.clone()).collect::<Vec<_>>(),
    });
    let status = if rows.iter().any(|r| r.diverged.is_some()) {
        "partial"
    } else {
        "ok"
    };
    let s = summary("sweep", status, &cfg.raw, cfg.experiment.seed, body, start.elapsed());
    write_json(out.join("sweep.json"), &s)?;
    Ok(s)
}

fn write_histogram(path: PathBuf, edges: &[f64], mis: &[f64], well: &[f64]) -> Result<PathBuf> {
    let mut t = Table::create(path, &HISTOGRAM_HEADER)?;
    for k in 0..mis.len() {
        t.row([
            fmt_f64(edges[k]),
            fmt_f64(edges[k + 1]),
            fmt_f64(mis[k]),
            fmt_f64(well[k]),
        ])?;
    }
    t.finish()
}

pub struct AnalyzeArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    /// Class counts for the dataset-scale comparison.
    pub classes: &'a [usize],
}

pub fn analyze(cfg: &LabConfig, args: AnalyzeArgs<'_>, out: &Path, quiet: bool) -> Result<Value> {
    let start = Instant::now();
    let exp = &cfg.experiment;
    create_dir(out)?;
    let data = generate_dataset(&exp.dataset)?;
    let mut body = serde_json::Map::new();

    let (model, weights) = match args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            check_compatible(&ck, exp)?;
            if ck.class_weights.rows() != exp.dataset.n_classes {
                return Err(LabError::Config(format!(
                    "checkpoint has {} classes, config has {}",
                    ck.class_weights.rows(),
                    exp.dataset.n_classes
                )));
            }
            let d = diagnose(
                &ck.model,
                &ck.class_weights,
                &data.inputs,
                &data.labels,
                exp.eval.diag_margin,
                exp.eval.n_bins,
            )?;
            let mut t = Table::create(out.join("correlation.csv"), &CORRELATION_HEADER)?;
            let h = d.hardness.clone();
            t.row([
                ck.epochs.to_string(),
                fmt_opt(h.as_ref().ok().map(|h| h.pearson_r)),
                d.n_misclassified().to_string(),
            ])?;
            t.finish()?;
            let h = h?;
            body.insert("pearson_r".into(), json!(h.pearson_r));
            body.insert("n_misclassified".into(), json!(h.n_misclassified));
            (ck.model, ck.class_weights)
        }
        None => {
            let mut exp = exp.clone();
            exp.eval.per_epoch_diagnostics = true;
            let t = match run_training(&exp, &data, "analyze", quiet)? {
                Outcome::Trained(t) => t,
                Outcome::Diverged { iteration, epoch, .. } => {
                    return Err(LabError::Diverged {
                        iteration,
                        epoch,
                        out: out.to_path_buf(),
                    })
                }
            };
            let mut table = Table::create(out.join("correlation.csv"), &CORRELATION_HEADER)?;
            for e in &t.log.epochs {
                table.row([
                    e.epoch.to_string(),
                    fmt_opt(e.hardness.map(|h| h.pearson_r)),
                    e.n_misclassified.to_string(),
                ])?;
            }
            table.finish()?;
            body.insert(
                "epochs".into(),
                json!(t.log.epochs.iter().map(epoch_json).collect::<Vec<_>>()),
            );
            if t.log.epochs.iter().all(|e| e.hardness.is_none()) {
                return Err(npclab_core::Error::InsufficientSamples { found: 0 }.into());
            }
            (t.model, t.class_weights)
        }
    };

    let d = diagnose(
        &model,
        &weights,
        &data.inputs,
        &data.labels,
        exp.eval.diag_margin,
        exp.eval.n_bins,
    )?;
    let overlap = d.overlap?;
    write_histogram(
        out.join("histogram.csv"),
        &overlap.bin_edges,
        &overlap.histogram_mis,
        &overlap.histogram_well,
    )?;
    body.insert("overlap_rate".into(), json!(overlap.overlap_rate));
    body.insert("n_mis".into(), json!(overlap.n_mis));
    body.insert("n_well".into(), json!(overlap.n_well));

    if !args.classes.is_empty() {
        let mut table = Table::create(out.join("correlation_scale.csv"), &SCALE_CORRELATION_HEADER)?;
        let mut mids = Vec::new();
        for &n in args.classes {
            let mut e = exp.clone();
            e.dataset.n_classes = n;
            e.eval.per_epoch_diagnostics = true;
            let data = generate_dataset(&e.dataset)?;
            let log = match run_training(&e, &data, &format!("{n} classes"), quiet)? {
                Outcome::Trained(t) => t.log,
                Outcome::Diverged { log, .. } => log,
            };
            for r in &log.epochs {
                table.row([
                    n.to_string(),
                    r.epoch.to_string(),
                    fmt_opt(r.hardness.map(|h| h.pearson_r)),
                    r.n_misclassified.to_string(),
                ])?;
            }
            let mid = mid_training_r(&log);
            mids.push(json!({ "n_classes": n, "mid_training_pearson_r": mid }));
        }
        table.finish()?;
        body.insert("scale".into(), json!(mids));
    }

    let s = summary(
        "analyze",
        "ok",
        &cfg.raw,
        exp.seed,
        Value::Object(body),
        start.elapsed(),
    );
    write_json(out.join("analysis.json"), &s)?;
    Ok(s)
}

/// Correlation at the middle epoch (`ceil(epochs / 2)`).
pub fn mid_training_r(log: &TrainingLog) -> Option<f64> {
    let n = log.epochs.len();
    if n == 0 {
        return None;
    }
    log.epochs[n.div_ceil(2) - 1].hardness.map(|h| h.pearson_r)
}

pub struct GradcheckArgs {
    pub variant: LossVariant,
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub seed: u64,
    /// Test hook: perturb one analytic coordinate before comparing.
    pub corrupt: bool,
}

pub struct GradcheckOutcome {
    pub max_relative_error: f64,
    pub worst: String,
    pub passed: bool,
}

pub fn gradcheck(args: &GradcheckArgs, out: Option<&Path>) -> Result<GradcheckOutcome> {
    let GradcheckArgs {
        variant,
        n,
        c,
        d,
        seed,
        corrupt,
    } = *args;
    if n == 0 || c < 2 || d == 0 {
        return Err(LabError::Config("shape needs N >= 1, C >= 2, d >= 1".into()));
    }
    let spec = ModelSpec {
        layer_widths: vec![d, d, d],
        activation: Activation::Tanh,
        init_scale: 1.0,
        seed: derive(seed, "model"),
    };
    let model = Mlp::init(&spec)?;
    let weights = init_class_weights(c, d, 1.0, derive(seed, "class_weights"));
    let mut rng = named_rng(seed, "inputs");
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())?;
    let labels = Labels::new((0..n).map(|_| rng.random_range(0..c)).collect(), c)?;
    let cfg = LossConfig::new(variant);

    let emb = model.embed(&x)?;
    let frozen = freeze_auxiliaries(&emb, &weights, &labels, &cfg)?;
    let (mut am, aw) = model_analytic_gradients(&model, &weights, &x, &labels, &cfg, frozen.as_ref())?;
    if corrupt {
        am[0][0] = am[0][0] * 1.5 + 1e-3;
    }
    let (nm, nw) = model_numeric_gradients(&model, &weights, &x, &labels, &cfg, frozen.as_ref(), GRADCHECK_EPSILON)?;
    let report = compare_model((&am, &aw), (&nm, &nw));
    let worst = report.worst.map(|w| w.to_string()).unwrap_or_default();
    let passed = report.max_relative_error < GRADCHECK_TOLERANCE;
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut t = Table::create(dir.join("gradcheck.csv"), &GRADCHECK_HEADER)?;
        t.row([
            variant.name().to_string(),
            n.to_string(),
            c.to_string(),
            d.to_string(),
            seed.to_string(),
            fmt_f64(report.max_relative_error),
            worst.clone(),
            passed.to_string(),
        ])?;
        t.finish()?;
    }
    Ok(GradcheckOutcome {
        max_relative_error: report.max_relative_error,
        worst,
        passed,
    })
}

pub fn dimstudy(cfg: &LabConfig, dims: &[usize], out: &Path, quiet: bool) -> Result<Value> {
    let start = Instant::now();
    if dims.len() < 2 {
        return Err(LabError::Config("dimstudy needs at least two dimensions".into()));
    }
    if dims.contains(&0) {
        return Err(LabError::Config("embedding dimensions must be positive".into()));
    }
    create_dir(out)?;
    let base = &cfg.experiment;
    let data = generate_dataset(&base.dataset)?;
    let n_bins = base.eval.n_bins;
    let mut hist_table = Table::create(out.join("dimstudy_histogram.csv"), &DIM_HISTOGRAM_HEADER)?;
    let mut summary_table = Table::create(out.join("dimstudy_summary.csv"), &DIM_SUMMARY_HEADER)?;
    let mut masses = Vec::new();
    let mut rows = Vec::new();
    for &dim in dims {
        let mut c = cfg.clone();
        c.embedding_dim = dim;
        c.finalize();
        let exp = &c.experiment;
        let t = match run_training(exp, &data, &format!("dim {dim}"), quiet)? {
            Outcome::Trained(t) => t,
            Outcome::Diverged { iteration, epoch, .. } => {
                return Err(LabError::Diverged {
                    iteration,
                    epoch,
                    out: out.to_path_buf(),
                })
            }
        };
        let emb = t.model.embed(&data.inputs)?;
        let cos = cosine_matrix(
            &UnitRows::new(&emb, npclab_core::geometry::DEFAULT_EPS)?,
            &UnitRows::new(&t.class_weights, npclab_core::geometry::DEFAULT_EPS)?,
        )?;
        let mask = compute_mask_with(&cos, &data.labels, PositiveMargin::Angular(exp.eval.diag_margin));
        let hard = hard_negative_similarities(&cos, &data.labels, &mask);
        let hist = cosine_histogram(&hard, n_bins)?;
        for k in 0..n_bins {
            let count = (hist.mass[k] * hist.count as f64).round() as usize;
            hist_table.row([
                dim.to_string(),
                fmt_f64(hist.edges[k]),
                fmt_f64(hist.edges[k + 1]),
                fmt_f64(hist.mass[k]),
                count.to_string(),
            ])?;
        }
        let d = diagnose(
            &t.model,
            &t.class_weights,
            &data.inputs,
            &data.labels,
            exp.eval.diag_margin,
            n_bins,
        )?;
        let overlap = d.overlap.as_ref().ok().map(|o| o.overlap_rate);
        let mean_hard = (!hard.is_empty()).then(|| hard.iter().sum::<f64>() / hard.len() as f64);
        let final_loss = t.log.epochs.last().map(|e| e.mean_loss);
        summary_table.row([
            dim.to_string(),
            hard.len().to_string(),
            fmt_opt(mean_hard),
            fmt_opt(overlap),
            fmt_opt(final_loss),
        ])?;
        rows.push(json!({
            "dim": dim,
            "n_hard_negatives": hard.len(),
            "mean_hard_cosine": mean_hard,
            "overlap_rate": overlap,
            "final_mean_loss": final_loss,
        }));
        masses.push((dim, hist.mass));
    }
    hist_table.finish()?;
    summary_table.finish()?;

    let mut pair_table = Table::create(out.join("dimstudy_overlap.csv"), &DIM_OVERLAP_HEADER)?;
    let mut pairs = Vec::new();
    for i in 0..masses.len() {
        for j in i + 1..masses.len() {
            let v = overlap_rate(&masses[i].1, &masses[j].1);
            pair_table.row([masses[i].0.to_string(), masses[j].0.to_string(), fmt_f64(v)])?;
            pairs.push(json!({ "dim_a": masses[i].0, "dim_b": masses[j].0, "intersection": v }));
        }
    }
    pair_table.finish()?;
    let body = json!({ "dims": rows, "pairwise_intersection": pairs });
    let s = summary("dimstudy", "ok", &cfg.raw, base.seed, body, start.elapsed());
    write_json(out.join("dimstudy.json"), &s)?;
    Ok(s)
}
