//! End-to-end training on synthetic identities and the evaluation protocol
//! that follows it.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{generate_dataset, SyntheticDataset, SyntheticDatasetSpec};
use crate::error::{Error, Result};
use crate::eval::{
    build_pairs, kfold_threshold_accuracy, rank1_identification, roc, tar_at_far, IdentificationResult, KFoldResult,
    RocCurve, TarAtFar,
};
use crate::geometry::{cosine_matrix, CosineMatrix, UnitRows, DEFAULT_EPS};
use crate::hardness::{
    compute_mask_with, hardness_correlation, similarity_distributions, DistributionOverlap, HardMask, HardnessReport,
};
use crate::loss::{batch_pass, Labels, LossConfig, LossVariant, PositiveMargin};
use crate::matrix::Matrix;
use crate::model::{Activation, Mlp, ModelSpec};
use crate::optim::{sgd_step, OptimizerState, TrainingSchedule};
use crate::seed::{derive, named_rng};

/// Held-out evaluation and diagnostics settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    /// Unseen identities used for verification and identification.
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub n_positive_pairs: usize,
    pub n_negative_pairs: usize,
    pub n_distractors: usize,
    pub far_targets: Vec<f64>,
    pub folds: usize,
    pub n_bins: usize,
    /// Margin of the mis-classification criterion used by the diagnostics;
    /// 0 means plain arg-max errors.
    pub diag_margin: f64,
    /// Compute hardness and overlap diagnostics after every epoch.
    pub per_epoch_diagnostics: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            n_classes: 100,
            samples_per_class: 4,
            n_positive_pairs: 300,
            n_negative_pairs: 3000,
            n_distractors: 500,
            far_targets: vec![1e-1, 1e-2, 1e-3],
            folds: 10,
            n_bins: 50,
            diag_margin: 0.0,
            per_epoch_diagnostics: true,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.samples_per_class < 2 {
            return Err(Error::InvalidConfig(
                "evaluation needs >= 2 classes with >= 2 samples each",
            ));
        }
        if self.far_targets.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::InvalidConfig("FAR targets must lie in (0, 1]"));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("need at least 2 folds"));
        }
        if self.n_bins < 2 {
            return Err(Error::InvalidConfig("need at least 2 histogram bins"));
        }
        let spc = self.samples_per_class;
        let positive = self.n_classes * spc * (spc - 1) / 2;
        let n = self.n_classes * spc;
        let negative = n * (n - 1) / 2 - positive;
        if self.n_positive_pairs > positive {
            return Err(Error::InfeasiblePairCount {
                kind: "positive",
                requested: self.n_positive_pairs,
                available: positive,
            });
        }
        if self.n_negative_pairs > negative {
            return Err(Error::InfeasiblePairCount {
                kind: "negative",
                requested: self.n_negative_pairs,
                available: negative,
            });
        }
        Ok(())
    }
}

/// Complete description of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: SyntheticDatasetSpec,
    pub model: ModelSpec,
    pub loss: LossConfig,
    pub schedule: TrainingSchedule,
    pub eval: EvalSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            dataset: SyntheticDatasetSpec {
                n_classes: 200,
                samples_per_class: 20,
                input_dim: 32,
                concentration: 64.0,
                crowding: 0.3,
                min_center_cosine: 0.7,
                seed: 0,
            },
            model: ModelSpec {
                layer_widths: vec![32, 64, 16],
                activation: Activation::Tanh,
                init_scale: 1.0,
                seed: 0,
            },
            loss: LossConfig::new(LossVariant::NpcFace),
            schedule: TrainingSchedule::default(),
            eval: EvalSpec::default(),
        };
        cfg.reseed(0);
        cfg
    }
}

impl ExperimentConfig {
    /// Sets the top-level seed and re-derives every component seed from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.dataset.seed = derive(seed, "dataset");
        self.model.seed = derive(seed, "model");
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        self.eval.validate()?;
        if self.model.layer_widths[0] != self.dataset.input_dim {
            return Err(Error::InvalidConfig("model input width must equal dataset input_dim"));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.model.embedding_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 1-based global iteration.
    pub iteration: usize,
    /// 1-based epoch.
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub n_misclassified: usize,
    pub hardness: Option<HardnessSummary>,
    pub overlap_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardnessSummary {
    pub pearson_r: f64,
    pub mean_pos_distance: f64,
    pub mean_neg_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Mean loss of each logged epoch.
    pub fn epoch_mean_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Mlp,
    pub class_weights: Matrix,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Invalid(Error),
    /// The loss became non-finite; the log holds everything up to that point.
    Diverged {
        iteration: usize,
        epoch: usize,
        log: TrainingLog,
    },
}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Invalid(e)
    }
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::Invalid(e) => write!(f, "{e}"),
            TrainError::Diverged { iteration, epoch, .. } => {
                write!(f, "loss diverged at iteration {iteration} (epoch {epoch})")
            }
        }
    }
}

impl core::error::Error for TrainError {}

/// Uniform class-weight init in `[-a, a]`, `a = init_scale * sqrt(3 / d)`.
pub fn init_class_weights(n_classes: usize, dim: usize, init_scale: f64, seed: u64) -> Matrix {
    let mut rng = crate::seed::rng(seed);
    let a = init_scale * libm::sqrt(3.0 / dim as f64);
    let data = (0..n_classes * dim).map(|_| rng.random_range(-a..=a)).collect();
    Matrix::from_vec(n_classes, dim, data).expect("sized")
}

/// Snapshot of the model's view of a labelled set.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub cosines: CosineMatrix,
    pub mask: HardMask,
    pub accuracy: f64,
    pub hardness: Result<HardnessReport>,
    pub overlap: Result<DistributionOverlap>,
}

impl Diagnostics {
    pub fn n_misclassified(&self) -> usize {
        (0..self.mask.rows()).filter(|&i| self.mask.is_hard_row(i)).count()
    }
}

pub fn diagnose(
    model: &Mlp,
    class_weights: &Matrix,
    inputs: &Matrix,
    labels: &Labels,
    diag_margin: f64,
    n_bins: usize,
) -> Result<Diagnostics> {
    let emb = model.embed(inputs)?;
    let cosines = cosine_matrix(
        &UnitRows::new(&emb, DEFAULT_EPS)?,
        &UnitRows::new(class_weights, DEFAULT_EPS)?,
    )?;
    let mask = compute_mask_with(&cosines, labels, PositiveMargin::Angular(diag_margin));
    let correct = (0..cosines.rows())
        .filter(|&i| {
            let row = cosines.row(i);
            let y = labels[i];
            // arg-max with ties to the lowest index
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (j, &c)| if c > acc.1 { (j, c) } else { acc },
                )
                .0;
            best == y
        })
        .count();
    let accuracy = correct as f64 / cosines.rows().max(1) as f64;
    let hardness = hardness_correlation(&cosines, labels, &mask);
    let overlap = similarity_distributions(&cosines, labels, &mask, n_bins);
    Ok(Diagnostics {
        cosines,
        mask,
        accuracy,
        hardness,
        overlap,
    })
}

/// Hooks called by [`train_with`] as training progresses.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord, _model: &Mlp, _class_weights: &Matrix) {}
}

impl TrainObserver for () {}

pub fn train(cfg: &ExperimentConfig) -> core::result::Result<TrainedModel, TrainError> {
    let data = generate_dataset(&cfg.dataset)?;
    train_on(cfg, &data, &mut ())
}

/// Trains on an already generated dataset.
pub fn train_on(
    cfg: &ExperimentConfig,
    data: &SyntheticDataset,
    observer: &mut dyn TrainObserver,
) -> core::result::Result<TrainedModel, TrainError> {
    cfg.validate()?;
    let mut model = Mlp::init(&cfg.model)?;
    let mut class_weights = init_class_weights(
        cfg.dataset.n_classes,
        cfg.embedding_dim(),
        cfg.model.init_scale,
        derive(cfg.seed, "class_weights"),
    );
    let mut sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    sizes.push(class_weights.as_slice().len());
    let sched = &cfg.schedule;
    let mut opt = OptimizerState::new(&sizes, sched.lr_initial, sched.momentum, sched.weight_decay)?;
    let mut shuffle_rng = named_rng(cfg.seed, "shuffle");

    let n = data.inputs.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainingLog::default();
    let mut iteration = 0;

    for epoch in 0..sched.total_epochs {
        opt.lr = sched.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0;
        for batch in order.chunks(sched.batch_size) {
            iteration += 1;
            let x = data.inputs.select_rows(batch);
            let labels = data.labels.select(batch);
            let (emb, cache) = model.forward(&x)?;
            let pass = match batch_pass(&emb, &class_weights, &labels, &cfg.loss, None) {
                Ok(p) => p,
                Err(Error::ZeroNorm { .. }) if !emb.is_finite() || !class_weights.is_finite() => {
                    return Err(diverged(iteration, epoch + 1, log));
                }
                Err(e) => return Err(e.into()),
            };
            let loss = pass.gradients.loss;
            if !loss.is_finite() || !pass.gradients.d_features.is_finite() {
                return Err(diverged(iteration, epoch + 1, log));
            }
            log.iterations.push(IterationRecord {
                iteration,
                epoch: epoch + 1,
                loss,
            });
            epoch_loss += loss;
            epoch_batches += 1;

            let grads = model.backward(&cache, &pass.gradients.d_features)?;
            let mut grad_slices = grads.slices();
            grad_slices.push(pass.gradients.d_weights.as_slice());
            let mut params = model.parameters_mut();
            params.push(class_weights.as_mut_slice());
            sgd_step(&mut opt, &mut params, &grad_slices)?;
        }

        let mean_loss = epoch_loss / epoch_batches.max(1) as f64;
        let record = if cfg.eval.per_epoch_diagnostics {
            let d = diagnose(
                &model,
                &class_weights,
                &data.inputs,
                &data.labels,
                cfg.eval.diag_margin,
                cfg.eval.n_bins,
            )?;
            EpochRecord {
                epoch: epoch + 1,
                lr: opt.lr,
                mean_loss,
                train_accuracy: d.accuracy,
                n_misclassified: d.n_misclassified(),
                hardness: d.hardness.as_ref().ok().map(|h| HardnessSummary {
                    pearson_r: h.pearson_r,
                    mean_pos_distance: h.mean_pos_distance,
                    mean_neg_distance: h.mean_neg_distance,
                }),
                overlap_rate: d.overlap.as_ref().ok().map(|o| o.overlap_rate),
            }
        } else {
            EpochRecord {
                epoch: epoch + 1,
                lr: opt.lr,
                mean_loss,
                train_accuracy: f64::NAN,
                n_misclassified: 0,
                hardness: None,
                overlap_rate: None,
            }
        };
        observer.on_epoch(&record, &model, &class_weights);
        log.epochs.push(record);
    }

    Ok(TrainedModel {
        model,
        class_weights,
        log,
    })
}

fn diverged(iteration: usize, epoch: usize, log: TrainingLog) -> TrainError {
    TrainError::Diverged { iteration, epoch, log }
}

/// Held-out verification and identification results.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub roc: RocCurve,
    pub tar_at_far: Vec<TarAtFar>,
    pub identification: IdentificationResult,
    pub pair_accuracy: KFoldResult,
}

impl EvalReport {
    pub fn tar_at(&self, far: f64) -> Option<f64> {
        self.tar_at_far.iter().find(|t| t.far_target == far).map(|t| t.tar)
    }
}

/// Open-set evaluation on identities never seen in training, drawn from the
/// same generator as the training set.
pub fn evaluate_model(model: &Mlp, cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.eval.validate()?;
    let ev = &cfg.eval;
    let spec = SyntheticDatasetSpec {
        n_classes: ev.n_classes,
        samples_per_class: ev.samples_per_class,
        seed: derive(cfg.seed, "eval"),
        ..cfg.dataset.clone()
    };
    let data = generate_dataset(&spec)?;
    let emb = model.embed(&data.inputs)?;

    let pairs = build_pairs(
        &data.labels,
        ev.n_positive_pairs,
        ev.n_negative_pairs,
        derive(cfg.seed, "pairs"),
    )?;
    let scores = pairs.scores(&emb)?;
    let flags = pairs.flags();
    let curve = roc(&scores, &flags)?;
    let tars = ev
        .far_targets
        .iter()
        .map(|&f| tar_at_far(&curve, f))
        .collect::<Result<Vec<_>>>()?;
    let pair_accuracy = kfold_threshold_accuracy(&scores, &flags, ev.folds, derive(cfg.seed, "folds"))?;

    // first sample of each identity is enrolled, the second is the probe
    let spc = ev.samples_per_class;
    let gallery_rows: Vec<usize> = (0..ev.n_classes).map(|k| k * spc).collect();
    let probe_rows: Vec<usize> = (0..ev.n_classes).map(|k| k * spc + 1).collect();
    let gallery = emb.select_rows(&gallery_rows);
    let probes = emb.select_rows(&probe_rows);
    let labels: Vec<usize> = (0..ev.n_classes).collect();
    let distractors = if ev.n_distractors == 0 {
        Matrix::zeros(0, emb.cols())
    } else {
        let dspec = SyntheticDatasetSpec {
            n_classes: ev.n_distractors.max(2),
            samples_per_class: 1,
            seed: derive(cfg.seed, "distractors"),
            ..cfg.dataset.clone()
        };
        let d = generate_dataset(&dspec)?;
        let rows: Vec<usize> = (0..ev.n_distractors).collect();
        model.embed(&d.inputs.select_rows(&rows))?
    };
    let identification = rank1_identification(&probes, &labels, &gallery, &labels, &distractors)?;

    Ok(EvalReport {
        roc: curve,
        tar_at_far: tars,
        identification,
        pair_accuracy,
    })
}
