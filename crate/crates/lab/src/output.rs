//! CSV tables with fixed headers and the JSON run summary.

use std::path::{Path, PathBuf};
use std::time::Duration;

use npclab_core::train::{EpochRecord, EvalReport, TrainingLog};
use serde_json::{json, Value};

use crate::error::{LabError, Result};

pub const SCHEMA_VERSION: &str = "npclab-report/1";

pub const LOSS_HEADER: [&str; 3] = ["iteration", "epoch", "loss"];
pub const DIAGNOSTICS_HEADER: [&str; 9] = [
    "epoch",
    "lr",
    "mean_loss",
    "train_accuracy",
    "n_misclassified",
    "pearson_r",
    "mean_pos_distance",
    "mean_neg_distance",
    "overlap_rate",
];
pub const CORRELATION_HEADER: [&str; 3] = ["epoch", "pearson_r", "n_misclassified"];
pub const SCALE_CORRELATION_HEADER: [&str; 4] = ["n_classes", "epoch", "pearson_r", "n_misclassified"];
pub const HISTOGRAM_HEADER: [&str; 4] = ["bin_left", "bin_right", "h_mis", "h_well"];
pub const ROC_HEADER: [&str; 3] = ["threshold", "far", "tar"];
pub const DIM_HISTOGRAM_HEADER: [&str; 5] = ["dim", "bin_left", "bin_right", "density", "count"];
pub const DIM_OVERLAP_HEADER: [&str; 3] = ["dim_a", "dim_b", "intersection"];
pub const DIM_SUMMARY_HEADER: [&str; 5] = [
    "dim",
    "n_hard_negatives",
    "mean_hard_cosine",
    "overlap_rate",
    "final_mean_loss",
];
pub const GRADCHECK_HEADER: [&str; 8] = [
    "variant",
    "n",
    "c",
    "d",
    "seed",
    "max_relative_error",
    "worst_coordinate",
    "passed",
];
/// FAR points reported in comparison tables regardless of `eval.far_targets`.
pub const TABLE_FARS: [f64; 3] = [1e-1, 1e-2, 1e-3];
pub const TABLE_HEADER: [&str; 17] = [
    "label",
    "variant",
    "s",
    "m",
    "t",
    "alpha",
    "m0",
    "m1",
    "diverged",
    "first_mean_loss",
    "final_mean_loss",
    "train_accuracy",
    "tar_far_1e-1",
    "tar_far_1e-2",
    "tar_far_1e-3",
    "rank1",
    "pair_accuracy",
];

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(format!("creating {}", dir.display()), e))
}

/// Shortest round-trip text for a float; non-finite values print as
/// `inf`, `-inf` or `NaN`.
pub fn fmt_f64(v: f64) -> String {
    v.to_string()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub struct Table {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl Table {
    pub fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(header)?;
        Ok(Self { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer
            .flush()
            .map_err(|e| LabError::io(format!("writing {}", self.path.display()), e))?;
        Ok(self.path)
    }
}

pub fn write_loss_csv(path: PathBuf, log: &TrainingLog) -> Result<PathBuf> {
    let mut t = Table::create(path, &LOSS_HEADER)?;
    for r in &log.iterations {
        t.row([r.iteration.to_string(), r.epoch.to_string(), fmt_f64(r.loss)])?;
    }
    t.finish()
}

pub fn write_diagnostics_csv(path: PathBuf, log: &TrainingLog) -> Result<PathBuf> {
    let mut t = Table::create(path, &DIAGNOSTICS_HEADER)?;
    for e in &log.epochs {
        t.row([
            e.epoch.to_string(),
            fmt_f64(e.lr),
            fmt_f64(e.mean_loss),
            fmt_f64(e.train_accuracy),
            e.n_misclassified.to_string(),
            fmt_opt(e.hardness.map(|h| h.pearson_r)),
            fmt_opt(e.hardness.map(|h| h.mean_pos_distance)),
            fmt_opt(e.hardness.map(|h| h.mean_neg_distance)),
            fmt_opt(e.overlap_rate),
        ])?;
    }
    t.finish()
}

pub fn write_roc_csv(path: PathBuf, report: &EvalReport) -> Result<PathBuf> {
    let mut t = Table::create(path, &ROC_HEADER)?;
    for p in &report.roc.points {
        t.row([fmt_f64(p.threshold), fmt_f64(p.far), fmt_f64(p.tar)])?;
    }
    t.finish()
}

pub fn epoch_json(e: &EpochRecord) -> Value {
    json!({
        "epoch": e.epoch,
        "lr": e.lr,
        "mean_loss": e.mean_loss,
        "train_accuracy": e.train_accuracy,
        "n_misclassified": e.n_misclassified,
        "pearson_r": e.hardness.map(|h| h.pearson_r),
        "mean_pos_distance": e.hardness.map(|h| h.mean_pos_distance),
        "mean_neg_distance": e.hardness.map(|h| h.mean_neg_distance),
        "overlap_rate": e.overlap_rate,
    })
}

pub fn eval_json(r: &EvalReport) -> Value {
    json!({
        "tar_at_far": r.tar_at_far.iter().map(|t| json!({
            "far_target": t.far_target,
            "tar": t.tar,
            "threshold": t.threshold,
            "far": t.far,
            "all_rejected": t.all_rejected,
        })).collect::<Vec<_>>(),
        "rank1": r.identification.rank1_accuracy,
        "n_probes": r.identification.n_probes,
        "n_gallery": r.identification.n_gallery,
        "n_distractors": r.identification.n_distractors,
        "pair_accuracy": r.pair_accuracy.mean_accuracy,
        "fold_accuracies": r.pair_accuracy.fold_accuracies,
        "n_positive_pairs": r.roc.n_positive,
        "n_negative_pairs": r.roc.n_negative,
    })
}

/// Envelope shared by every JSON report.
pub fn summary(command: &str, status: &str, config_echo: &str, seed: u64, body: Value, elapsed: Duration) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "status": status,
        "seed": seed,
        "config": config_echo,
        "result": body,
        "elapsed_seconds": elapsed.as_secs_f64(),
    })
}

pub fn write_json(path: PathBuf, value: &Value) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(&path, text).map_err(|e| LabError::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}
