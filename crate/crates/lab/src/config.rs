//! Flat `key = value` experiment configs with dotted section prefixes.
//!
//! ```text
//! # comments run to the end of the line
//! seed = 7
//! dataset.n_classes = 200
//! loss.variant = npcface
//! schedule.milestones = 16, 24, 28
//! ```
//!
//! Unknown and repeated keys are errors. `loss.variant` is applied before the
//! other keys so that `loss.m` defaults to the chosen variant's margin.

use std::path::{Path, PathBuf};

use npclab_core::loss::MvPositive;
use npclab_core::model::Activation;
use npclab_core::train::ExperimentConfig;
use npclab_core::{LossConfig, LossVariant};

use crate::error::{LabError, Result};

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "top-level seed; every component seed is derived from it"),
    ("output_dir", "default directory for artifacts (overridden by --out)"),
    ("dataset.n_classes", "training identities"),
    ("dataset.samples_per_class", "samples drawn per identity"),
    ("dataset.input_dim", "input dimension"),
    (
        "dataset.concentration",
        "cluster tightness kappa; noise scale is 1/sqrt(kappa)",
    ),
    (
        "dataset.crowding",
        "fraction of centers placed next to an existing one, in [0, 1]",
    ),
    (
        "dataset.min_center_cosine",
        "cosine a crowded center must reach with its anchor",
    ),
    (
        "model.hidden_widths",
        "comma-separated hidden layer widths (may be empty)",
    ),
    ("model.embedding_dim", "embedding dimension"),
    ("model.activation", "relu or tanh"),
    (
        "model.init_scale",
        "multiplier on the sqrt(3 / fan_in) uniform init bound",
    ),
    ("loss.variant", "normsoftmax, cosface, arcface, mvsoftmax or npcface"),
    ("loss.s", "logit scale"),
    ("loss.m", "fixed margin for cosface, arcface and mvsoftmax"),
    ("loss.t", "hard-negative multiplier"),
    ("loss.alpha", "hard-negative offset (npcface)"),
    ("loss.m0", "basic collaborative margin (npcface)"),
    ("loss.m1", "collaborative margin range (npcface)"),
    ("loss.mv_positive", "angular or additive positive margin for mvsoftmax"),
    ("schedule.epochs", "training epochs"),
    ("schedule.lr", "initial learning rate"),
    (
        "schedule.milestones",
        "comma-separated 0-based epochs at which the rate decays",
    ),
    ("schedule.decay", "learning-rate divisor applied at each milestone"),
    ("schedule.batch_size", "mini-batch size"),
    ("schedule.momentum", "SGD momentum"),
    ("schedule.weight_decay", "L2 weight decay"),
    ("eval.n_classes", "held-out identities for evaluation"),
    ("eval.samples_per_class", "samples per held-out identity (>= 2)"),
    ("eval.positive_pairs", "genuine verification pairs"),
    ("eval.negative_pairs", "impostor verification pairs"),
    (
        "eval.distractors",
        "distractor embeddings added to the identification gallery",
    ),
    ("eval.far_targets", "comma-separated FAR operating points"),
    ("eval.folds", "folds for threshold-selected pair accuracy"),
    ("eval.bins", "histogram bins over [-1, 1]"),
    (
        "eval.diag_margin",
        "angular margin of the mis-classification criterion in diagnostics",
    ),
    ("eval.per_epoch_diagnostics", "true or false"),
];

/// Parse failure; `line` is 1-based and absent for whole-file checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: Option<usize>,
    pub message: String,
}

/// A parsed experiment plus the text it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabConfig {
    pub experiment: ExperimentConfig,
    pub hidden_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub output_dir: Option<PathBuf>,
    /// Verbatim input, echoed into reports.
    pub raw: String,
}

impl Default for LabConfig {
    fn default() -> Self {
        let experiment = ExperimentConfig::default();
        let w = &experiment.model.layer_widths;
        let mut cfg = Self {
            hidden_widths: w[1..w.len() - 1].to_vec(),
            embedding_dim: w[w.len() - 1],
            experiment,
            output_dir: None,
            raw: String::new(),
        };
        cfg.finalize();
        cfg
    }
}

impl LabConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw =
            std::fs::read_to_string(path).map_err(|e| LabError::io(format!("reading config {}", path.display()), e))?;
        Self::parse(&raw).map_err(|e| LabError::ConfigParse {
            path: path.to_path_buf(),
            line: e.line,
            message: e.message,
        })
    }

    pub fn parse(raw: &str) -> std::result::Result<Self, ParseError> {
        let at = |line: usize, message: String| ParseError {
            line: Some(line),
            message,
        };
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (idx, line) in raw.lines().enumerate() {
            let line_no = idx + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(at(line_no, format!("expected `key = value`, found `{content}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(at(line_no, format!("unknown key `{key}`")));
            }
            if let Some((first, _, _)) = entries.iter().find(|(_, k, _)| *k == key) {
                return Err(at(line_no, format!("key `{key}` already set on line {first}")));
            }
            entries.push((line_no, key, value));
        }

        let mut cfg = LabConfig::default();
        entries.sort_by_key(|&(_, key, _)| key != "loss.variant");
        for (line_no, key, value) in entries {
            cfg.set(key, value)
                .map_err(|msg| at(line_no, format!("{key}: {msg}")))?;
        }
        cfg.finalize();
        cfg.experiment.validate().map_err(|e| ParseError {
            line: None,
            message: e.to_string(),
        })?;
        cfg.raw = raw.to_string();
        Ok(cfg)
    }

    /// Sets one key; the caller must [`finalize`](Self::finalize) afterwards.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let e = &mut self.experiment;
        match key {
            "seed" => e.seed = num(value)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "dataset.n_classes" => e.dataset.n_classes = num(value)?,
            "dataset.samples_per_class" => e.dataset.samples_per_class = num(value)?,
            "dataset.input_dim" => e.dataset.input_dim = num(value)?,
            "dataset.concentration" => e.dataset.concentration = num(value)?,
            "dataset.crowding" => e.dataset.crowding = num(value)?,
            "dataset.min_center_cosine" => e.dataset.min_center_cosine = num(value)?,
            "model.hidden_widths" => self.hidden_widths = list(value)?,
            "model.embedding_dim" => self.embedding_dim = num(value)?,
            "model.activation" => {
                e.model.activation = Activation::parse(value).ok_or_else(|| format!("unknown activation `{value}`"))?
            }
            "model.init_scale" => e.model.init_scale = num(value)?,
            "loss.variant" => {
                let v = LossVariant::parse(value).ok_or_else(|| format!("unknown loss variant `{value}`"))?;
                let s = e.loss.s;
                e.loss = LossConfig::new(v).with_scale(s);
            }
            "loss.s" => e.loss.s = num(value)?,
            "loss.m" => e.loss.m = num(value)?,
            "loss.t" => e.loss.t = num(value)?,
            "loss.alpha" => e.loss.alpha = num(value)?,
            "loss.m0" => e.loss.m0 = num(value)?,
            "loss.m1" => e.loss.m1 = num(value)?,
            "loss.mv_positive" => {
                e.loss.mv_positive = match value.to_ascii_lowercase().as_str() {
                    "angular" => MvPositive::Angular,
                    "additive" => MvPositive::Additive,
                    _ => return Err(format!("expected angular or additive, found `{value}`")),
                }
            }
            "schedule.epochs" => e.schedule.total_epochs = num(value)?,
            "schedule.lr" => e.schedule.lr_initial = num(value)?,
            "schedule.milestones" => e.schedule.milestones = list(value)?,
            "schedule.decay" => e.schedule.decay_factor = num(value)?,
            "schedule.batch_size" => e.schedule.batch_size = num(value)?,
            "schedule.momentum" => e.schedule.momentum = num(value)?,
            "schedule.weight_decay" => e.schedule.weight_decay = num(value)?,
            "eval.n_classes" => e.eval.n_classes = num(value)?,
            "eval.samples_per_class" => e.eval.samples_per_class = num(value)?,
            "eval.positive_pairs" => e.eval.n_positive_pairs = num(value)?,
            "eval.negative_pairs" => e.eval.n_negative_pairs = num(value)?,
            "eval.distractors" => e.eval.n_distractors = num(value)?,
            "eval.far_targets" => e.eval.far_targets = list(value)?,
            "eval.folds" => e.eval.folds = num(value)?,
            "eval.bins" => e.eval.n_bins = num(value)?,
            "eval.diag_margin" => e.eval.diag_margin = num(value)?,
            "eval.per_epoch_diagnostics" => {
                e.eval.per_epoch_diagnostics = value
                    .parse()
                    .map_err(|_| format!("expected true or false, found `{value}`"))?
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Rebuilds derived fields: layer widths and component seeds.
    pub fn finalize(&mut self) {
        let e = &mut self.experiment;
        let mut widths = vec![e.dataset.input_dim];
        widths.extend(&self.hidden_widths);
        widths.push(self.embedding_dim);
        e.model.layer_widths = widths;
        let seed = e.seed;
        e.reseed(seed);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.experiment.seed = seed;
        self.finalize();
        self
    }
}

fn num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

fn list<T: std::str::FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(v.trim())).collect()
}

/// Loss overrides written as `name[:key=value,...]`, e.g. `npcface:m1=0,t=1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub label: String,
    pub loss: LossConfig,
}

impl VariantSpec {
    pub fn parse(spec: &str, base_scale: f64) -> Result<Self> {
        let (name, overrides) = match spec.split_once(':') {
            Some((n, o)) => (n, o),
            None => (spec, ""),
        };
        let variant = LossVariant::parse(name.trim())
            .ok_or_else(|| LabError::Config(format!("unknown loss variant `{name}` in `{spec}`")))?;
        let mut cfg = LabConfig::default();
        cfg.experiment.loss = LossConfig::new(variant).with_scale(base_scale);
        for kv in overrides.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("expected key=value in `{spec}`, found `{kv}`")))?;
            let key = format!("loss.{}", k.trim());
            if key == "loss.variant" {
                return Err(LabError::Config(format!("`{spec}`: variant is given by the name")));
            }
            cfg.set(&key, v.trim())
                .map_err(|m| LabError::Config(format!("`{spec}`: {key}: {m}")))?;
        }
        cfg.experiment
            .loss
            .validate()
            .map_err(|e| LabError::Config(format!("`{spec}`: {e}")))?;
        Ok(Self {
            label: spec.to_string(),
            loss: cfg.experiment.loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = LabConfig::parse("").unwrap();
        assert_eq!(cfg.experiment, LabConfig::default().experiment);
        assert_eq!(cfg.experiment.model.layer_widths, vec![32, 64, 16]);
    }

    #[test]
    fn keys_and_comments() {
        let text = "# header\nseed = 5\nloss.m = 0.3  # override\nloss.variant = arcface\nmodel.hidden_widths =\n";
        let cfg = LabConfig::parse(text).unwrap();
        assert_eq!(cfg.experiment.seed, 5);
        assert_eq!(cfg.experiment.loss.variant, LossVariant::ArcFace);
        assert_eq!(cfg.experiment.loss.m, 0.3);
        assert_eq!(cfg.experiment.model.layer_widths, vec![32, 16]);
        assert_eq!(cfg.raw, text);
        assert_ne!(
            cfg.experiment.dataset.seed,
            LabConfig::default().experiment.dataset.seed
        );
    }

    #[test]
    fn variant_sets_margin_default() {
        let cfg = LabConfig::parse("loss.variant = cosface").unwrap();
        assert_eq!(cfg.experiment.loss.m, 0.35);
    }

    #[test]
    fn diagnostics_name_the_line() {
        assert_eq!(LabConfig::parse("seed = 1\nloss.tt = 3").unwrap_err().line, Some(2));
        assert_eq!(LabConfig::parse("\n\nseed 1").unwrap_err().line, Some(3));
        let e = LabConfig::parse("seed = 1\nseed = 2").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("line 1"));
        let e = LabConfig::parse("dataset.crowding = lots").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.message.contains("dataset.crowding"));
        assert_eq!(LabConfig::parse("dataset.crowding = 2").unwrap_err().line, None);
    }

    #[test]
    fn variant_specs() {
        let v = VariantSpec::parse("npcface:m1=0,t=1", 64.0).unwrap();
        assert_eq!((v.loss.variant, v.loss.m1, v.loss.t), (LossVariant::NpcFace, 0.0, 1.0));
        assert_eq!(v.label, "npcface:m1=0,t=1");
        assert_eq!(VariantSpec::parse("arcface", 30.0).unwrap().loss.s, 30.0);
        assert!(VariantSpec::parse("softmax2", 64.0).is_err());
        assert!(VariantSpec::parse("npcface:q=1", 64.0).is_err());
        assert!(VariantSpec::parse("npcface:m1", 64.0).is_err());
    }
}
