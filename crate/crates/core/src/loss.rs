//! Forward and backward passes of the normalized-softmax loss family.
//!
//! Every variant shares one pipeline: cosines are turned into logits by a
//! variant-specific map, a stable softmax produces class probabilities, and
//! the mean cross-entropy is the loss. Gradients are propagated analytically
//! back through the logit map and the l2 normalization of features and class
//! weights. Mined quantities (the hard mask and the collaborative margins)
//! are recomputed from the current cosines but treated as constants by the
//! backward pass.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{cos_shifted, cos_shifted_grad, cosine_matrix, CosineMatrix, UnitRows, DEFAULT_EPS};
use crate::hardness::{collaborative_margin, compute_mask_with, CollaborativeMargins, HardMask};
use crate::matrix::Matrix;

/// Smallest probability fed to the logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossVariant {
    NormSoftmax,
    CosFace,
    ArcFace,
    MvSoftmax,
    NpcFace,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::NormSoftmax,
        LossVariant::CosFace,
        LossVariant::ArcFace,
        LossVariant::MvSoftmax,
        LossVariant::NpcFace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::NormSoftmax => "normsoftmax",
            LossVariant::CosFace => "cosface",
            LossVariant::ArcFace => "arcface",
            LossVariant::MvSoftmax => "mvsoftmax",
            LossVariant::NpcFace => "npcface",
        }
    }

    /// Case-insensitive lookup; `-` and `_` are ignored.
    pub fn parse(s: &str) -> Option<Self> {
        let mut key = alloc::string::String::with_capacity(s.len());
        key.extend(
            s.chars()
                .filter(|c| *c != '-' && *c != '_')
                .map(|c| c.to_ascii_lowercase()),
        );
        LossVariant::ALL.into_iter().find(|v| v.name() == key)
    }

    /// Whether the variant needs a hard mask.
    pub fn is_mining(self) -> bool {
        matches!(self, LossVariant::MvSoftmax | LossVariant::NpcFace)
    }
}

impl core::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Positive-logit flavour used by MV-softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvPositive {
    /// `cos(theta + m)`
    Angular,
    /// `cos(theta) - m`
    Additive,
}

/// Margin applied to a ground-truth cosine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositiveMargin {
    None,
    Additive(f64),
    Angular(f64),
}

impl PositiveMargin {
    #[inline]
    pub fn apply(self, c: f64) -> f64 {
        match self {
            PositiveMargin::None => c,
            PositiveMargin::Additive(m) => c - m,
            PositiveMargin::Angular(m) => cos_shifted(c, m),
        }
    }

    /// d apply(c) / dc
    #[inline]
    pub fn grad(self, c: f64) -> f64 {
        match self {
            PositiveMargin::None | PositiveMargin::Additive(_) => 1.0,
            PositiveMargin::Angular(m) => cos_shifted_grad(c, m),
        }
    }
}

/// Variant selector and all scalar hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Logit scale.
    pub s: f64,
    /// Fixed positive margin (CosFace, ArcFace, MV-softmax).
    pub m: f64,
    /// Multiplicative emphasis on hard negatives.
    pub t: f64,
    /// Additive emphasis on hard negatives (NPCFace).
    pub alpha: f64,
    /// Basic collaborative margin.
    pub m0: f64,
    /// Collaborative margin range.
    pub m1: f64,
    pub mv_positive: MvPositive,
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        let m = match variant {
            LossVariant::NormSoftmax | LossVariant::NpcFace => 0.0,
            LossVariant::CosFace => 0.35,
            LossVariant::ArcFace | LossVariant::MvSoftmax => 0.5,
        };
        Self {
            variant,
            s: 64.0,
            m,
            t: 1.1,
            alpha: 0.25,
            m0: 0.4,
            m1: 0.2,
            mv_positive: MvPositive::Angular,
        }
    }

    pub fn with_scale(mut self, s: f64) -> Self {
        self.s = s;
        self
    }

    pub fn with_margin(mut self, m: f64) -> Self {
        self.m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pi = core::f64::consts::PI;
        let finite = [self.s, self.m, self.t, self.alpha, self.m0, self.m1]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("loss parameters must be finite"));
        }
        if self.s <= 0.0 {
            return Err(Error::InvalidConfig("s must be positive"));
        }
        if self.t < 1.0 {
            return Err(Error::InvalidConfig("t must be >= 1"));
        }
        if self.m < 0.0 || self.alpha < 0.0 || self.m0 < 0.0 || self.m1 < 0.0 {
            return Err(Error::InvalidConfig("margins and alpha must be non-negative"));
        }
        if self.m >= pi || self.m0 >= pi || self.m0 + self.m1 >= pi {
            return Err(Error::InvalidConfig("angular margins must stay below pi"));
        }
        Ok(())
    }

    /// The positive margin of the non-collaborative variants.
    fn fixed_positive(&self) -> PositiveMargin {
        match self.variant {
            LossVariant::NormSoftmax => PositiveMargin::None,
            LossVariant::CosFace => PositiveMargin::Additive(self.m),
            LossVariant::ArcFace => PositiveMargin::Angular(self.m),
            LossVariant::MvSoftmax => match self.mv_positive {
                MvPositive::Angular => PositiveMargin::Angular(self.m),
                MvPositive::Additive => PositiveMargin::Additive(self.m),
            },
            LossVariant::NpcFace => PositiveMargin::Angular(self.m0),
        }
    }

    /// Margin used to decide whether a sample is hard to a class.
    pub fn mining_margin(&self) -> PositiveMargin {
        self.fixed_positive()
    }
}

/// Ground-truth labels of a batch, validated against the class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    labels: Vec<usize>,
    n_classes: usize,
}

impl Labels {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidLabel { label, n_classes });
        }
        Ok(Self { labels, n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

impl core::ops::Deref for Labels {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.labels
    }
}

/// Mined per-batch quantities, frozen for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Auxiliaries {
    pub mask: HardMask,
    pub margins: CollaborativeMargins,
}

impl Auxiliaries {
    /// Mines the mask (and, for NPCFace, the collaborative margins) from the
    /// current cosines. Returns `None` for variants that use neither.
    pub fn mine(cosines: &CosineMatrix, labels: &Labels, config: &LossConfig) -> Option<Self> {
        match config.variant {
            LossVariant::MvSoftmax => {
                let mask = compute_mask_with(cosines, labels, config.mining_margin());
                Some(Self {
                    margins: CollaborativeMargins::uniform(cosines.rows(), config.m),
                    mask,
                })
            }
            LossVariant::NpcFace => {
                let mask = compute_mask_with(cosines, labels, config.mining_margin());
                let margins = collaborative_margin(cosines, &mask, config.m0, config.m1);
                Some(Self { mask, margins })
            }
            _ => None,
        }
    }
}

fn check_inputs(cosines: &CosineMatrix, labels: &Labels, config: &LossConfig, aux: Option<&Auxiliaries>) -> Result<()> {
    if labels.len() != cosines.rows() {
        return Err(Error::DimensionMismatch {
            expected: cosines.rows(),
            actual: labels.len(),
        });
    }
    if labels.n_classes() != cosines.cols() {
        return Err(Error::DimensionMismatch {
            expected: cosines.cols(),
            actual: labels.n_classes(),
        });
    }
    if config.variant.is_mining() {
        let aux = aux.ok_or(Error::ConfigMismatch(config.variant.name()))?;
        if aux.mask.rows() != cosines.rows() || aux.mask.cols() != cosines.cols() {
            return Err(Error::ShapeMismatch {
                what: "hard mask",
                expected: (cosines.rows(), cosines.cols()),
                actual: (aux.mask.rows(), aux.mask.cols()),
            });
        }
        if aux.margins.len() != cosines.rows() {
            return Err(Error::DimensionMismatch {
                expected: cosines.rows(),
                actual: aux.margins.len(),
            });
        }
    }
    Ok(())
}

/// Positive margin applied to row `i`.
#[inline]
fn row_margin(config: &LossConfig, aux: Option<&Auxiliaries>, i: usize) -> PositiveMargin {
    match (config.variant, aux) {
        (LossVariant::NpcFace, Some(aux)) => PositiveMargin::Angular(aux.margins[i]),
        _ => config.fixed_positive(),
    }
}

#[inline]
fn is_hard(config: &LossConfig, aux: Option<&Auxiliaries>, i: usize, j: usize) -> bool {
    config.variant.is_mining() && aux.is_some_and(|a| a.mask.get(i, j))
}

/// Negative logit for a hard entry.
#[inline]
fn hard_negative_logit(config: &LossConfig, c: f64) -> f64 {
    match config.variant {
        LossVariant::MvSoftmax => config.s * (config.t * c + config.t - 1.0),
        _ => config.s * (config.t * c + config.alpha),
    }
}

/// Maps cosines to logits for the configured variant.
pub fn forward_logits(
    cosines: &CosineMatrix,
    labels: &Labels,
    config: &LossConfig,
    aux: Option<&Auxiliaries>,
) -> Result<Matrix> {
    check_inputs(cosines, labels, config, aux)?;
    let s = config.s;
    let mut logits = Matrix::zeros(cosines.rows(), cosines.cols());
    for i in 0..cosines.rows() {
        let y = labels[i];
        let margin = row_margin(config, aux, i);
        let row = cosines.row(i);
        for (j, f) in logits.row_mut(i).iter_mut().enumerate() {
            let c = row[j];
            *f = if j == y {
                s * margin.apply(c)
            } else if is_hard(config, aux, i, j) {
                hard_negative_logit(config, c)
            } else {
                s * c
            };
        }
    }
    Ok(logits)
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_probabilities(logits: &Matrix) -> Matrix {
    let mut probs = logits.clone();
    for i in 0..probs.rows() {
        let row = probs.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    probs
}

/// Row-wise log-softmax, `f_k - logsumexp(f)`.
pub fn log_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
        let lse = max + libm::log(sum);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Mean cross-entropy `-(1/N) sum_i log p_{i, y_i}`.
pub fn loss_value(probs: &Matrix, labels: &Labels) -> f64 {
    let n = probs.rows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n).map(|i| -libm::log(probs[(i, labels[i])].max(PROB_FLOOR))).sum();
    total / n as f64
}

/// `dL/df`: `(p - 1)/N` on the label column, `p/N` elsewhere.
pub fn backward_logits(probs: &Matrix, labels: &Labels) -> Matrix {
    let n = probs.rows() as f64;
    let mut grad = probs.clone();
    for i in 0..grad.rows() {
        let y = labels[i];
        let row = grad.row_mut(i);
        // p_y - 1 cancels when p_y is near 1; the complement sum does not
        row[y] = 0.0;
        row[y] = -row.iter().sum::<f64>();
        row.iter_mut().for_each(|v| *v /= n);
    }
    grad
}

/// Chain rule through the logit map: `dL/dcos = dL/df * df/dcos`, with the
/// mask and collaborative margins held constant.
pub fn backward_cosines(
    d_logits: &Matrix,
    cosines: &CosineMatrix,
    labels: &Labels,
    config: &LossConfig,
    aux: Option<&Auxiliaries>,
) -> Result<Matrix> {
    check_inputs(cosines, labels, config, aux)?;
    d_logits.ensure_shape("logit gradient", (cosines.rows(), cosines.cols()))?;
    let mut out = Matrix::zeros(cosines.rows(), cosines.cols());
    for i in 0..cosines.rows() {
        let y = labels[i];
        let margin = row_margin(config, aux, i);
        let row = cosines.row(i);
        let dl = d_logits.row(i);
        for (j, d) in out.row_mut(i).iter_mut().enumerate() {
            *d = dl[j] * logit_slope(config, aux, margin, i, j, y, row[j]);
        }
    }
    Ok(out)
}

/// `df_ij / dcos_ij` for one entry.
#[inline]
fn logit_slope(
    config: &LossConfig,
    aux: Option<&Auxiliaries>,
    margin: PositiveMargin,
    i: usize,
    j: usize,
    y: usize,
    c: f64,
) -> f64 {
    if j == y {
        config.s * margin.grad(c)
    } else if is_hard(config, aux, i, j) {
        config.s * config.t
    } else {
        config.s
    }
}

/// Slope of the logit map at one entry; exposed for tests of the factor
/// values.
pub fn cosine_factor(
    cosines: &CosineMatrix,
    labels: &Labels,
    config: &LossConfig,
    aux: Option<&Auxiliaries>,
    i: usize,
    j: usize,
) -> Result<f64> {
    check_inputs(cosines, labels, config, aux)?;
    let margin = row_margin(config, aux, i);
    Ok(logit_slope(config, aux, margin, i, j, labels[i], cosines.get(i, j)))
}

/// Gradients of `sum_ij d_cos_ij * cos_ij` with respect to the raw
/// (unnormalized) features and class weights.
pub fn backward_parameters(
    d_cosines: &Matrix,
    raw_features: &Matrix,
    raw_weights: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let features = UnitRows::new(raw_features, DEFAULT_EPS)?;
    let weights = UnitRows::new(raw_weights, DEFAULT_EPS)?;
    backward_normalized(d_cosines, &features, &weights)
}

pub(crate) fn backward_normalized(
    d_cosines: &Matrix,
    features: &UnitRows,
    weights: &UnitRows,
) -> Result<(Matrix, Matrix)> {
    let (n, c, d) = (features.rows(), weights.rows(), features.dim());
    if weights.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: weights.dim(),
        });
    }
    d_cosines.ensure_shape("cosine gradient", (n, c))?;
    let xu = features.unit();
    let wu = weights.unit();

    // gradients with respect to the unit vectors
    let mut g_x = Matrix::zeros(n, d);
    let mut g_w = Matrix::zeros(c, d);
    for i in 0..n {
        let dc = d_cosines.row(i);
        let x = xu.row(i);
        for j in 0..c {
            let g = dc[j];
            if g == 0.0 {
                continue;
            }
            let w = wu.row(j);
            for k in 0..d {
                g_x[(i, k)] += g * w[k];
                g_w[(j, k)] += g * x[k];
            }
        }
    }

    let mut d_features = Matrix::zeros(n, d);
    for i in 0..n {
        features.backward_row(i, g_x.row(i), d_features.row_mut(i));
    }
    let mut d_weights = Matrix::zeros(c, d);
    for j in 0..c {
        weights.backward_row(j, g_w.row(j), d_weights.row_mut(j));
    }
    Ok((d_features, d_weights))
}

/// Loss and all gradients of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub d_logits: Matrix,
    pub d_cosines: Matrix,
    /// With respect to the raw (pre-normalization) features.
    pub d_features: Matrix,
    /// With respect to the raw class weights.
    pub d_weights: Matrix,
}

/// Everything produced by one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub cosines: CosineMatrix,
    pub auxiliaries: Option<Auxiliaries>,
    pub logits: Matrix,
    pub probabilities: Matrix,
    pub gradients: GradientBundle,
}

/// Full pass from raw features and raw class weights.
///
/// When `frozen` is `None` the mask and margins are mined from the current
/// cosines; otherwise the supplied ones are used verbatim.
pub fn batch_pass(
    raw_features: &Matrix,
    raw_weights: &Matrix,
    labels: &Labels,
    config: &LossConfig,
    frozen: Option<&Auxiliaries>,
) -> Result<BatchPass> {
    let features = UnitRows::new(raw_features, DEFAULT_EPS)?;
    let weights = UnitRows::new(raw_weights, DEFAULT_EPS)?;
    let cosines = cosine_matrix(&features, &weights)?;
    let auxiliaries = match frozen {
        Some(a) => Some(a.clone()),
        None => Auxiliaries::mine(&cosines, labels, config),
    };
    let aux = auxiliaries.as_ref();
    let logits = forward_logits(&cosines, labels, config, aux)?;
    let probabilities = softmax_probabilities(&logits);
    let loss = loss_value(&probabilities, labels);
    let d_logits = backward_logits(&probabilities, labels);
    let d_cosines = backward_cosines(&d_logits, &cosines, labels, config, aux)?;
    let (d_features, d_weights) = backward_normalized(&d_cosines, &features, &weights)?;
    Ok(BatchPass {
        cosines,
        auxiliaries,
        logits,
        probabilities,
        gradients: GradientBundle {
            loss,
            d_logits,
            d_cosines,
            d_features,
            d_weights,
        },
    })
}

/// Logits of a batch from raw inputs, with optional frozen auxiliaries.
pub fn batch_logits(
    raw_features: &Matrix,
    raw_weights: &Matrix,
    labels: &Labels,
    config: &LossConfig,
    frozen: Option<&Auxiliaries>,
) -> Result<Matrix> {
    let features = UnitRows::new(raw_features, DEFAULT_EPS)?;
    let weights = UnitRows::new(raw_weights, DEFAULT_EPS)?;
    let cosines = cosine_matrix(&features, &weights)?;
    match frozen {
        Some(a) => forward_logits(&cosines, labels, config, Some(a)),
        None => {
            let aux = Auxiliaries::mine(&cosines, labels, config);
            forward_logits(&cosines, labels, config, aux.as_ref())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single(c: &[f64]) -> CosineMatrix {
        CosineMatrix::from_matrix(Matrix::from_rows(&[c]).unwrap())
    }

    fn npc_aux(mask_row: Vec<bool>, labels: &Labels, margin: f64) -> Auxiliaries {
        Auxiliaries {
            mask: HardMask::from_rows(&[mask_row], labels).unwrap(),
            margins: CollaborativeMargins::uniform(1, margin),
        }
    }

    #[test]
    fn npcface_negative_logits() {
        let labels = Labels::new(vec![0], 2).unwrap();
        let cfg = LossConfig::new(LossVariant::NpcFace);
        let c = single(&[0.9, 0.5]);
        let easy = forward_logits(&c, &labels, &cfg, Some(&npc_aux(vec![false, false], &labels, 0.4))).unwrap();
        assert_eq!(easy[(0, 1)], 64.0 * 0.5);
        let hard = forward_logits(&c, &labels, &cfg, Some(&npc_aux(vec![false, true], &labels, 0.4))).unwrap();
        assert!((hard[(0, 1)] - 51.2).abs() < 1e-12);
    }

    #[test]
    fn mvsoftmax_hard_negative_logit() {
        let labels = Labels::new(vec![0], 2).unwrap();
        let cfg = LossConfig::new(LossVariant::MvSoftmax);
        let c = single(&[0.9, 0.5]);
        let f = forward_logits(&c, &labels, &cfg, Some(&npc_aux(vec![false, true], &labels, 0.5))).unwrap();
        assert!((f[(0, 1)] - 41.6).abs() < 1e-12);
    }

    #[test]
    fn mining_variant_without_mask_is_config_mismatch() {
        let labels = Labels::new(vec![0], 2).unwrap();
        let c = single(&[0.9, 0.5]);
        for v in [LossVariant::MvSoftmax, LossVariant::NpcFace] {
            let cfg = LossConfig::new(v);
            assert_eq!(
                forward_logits(&c, &labels, &cfg, None).unwrap_err(),
                Error::ConfigMismatch(v.name())
            );
            let d = Matrix::zeros(1, 2);
            assert!(backward_cosines(&d, &c, &labels, &cfg, None).is_err());
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_probabilities(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap());
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = softmax_probabilities(&Matrix::from_rows(&[[core::f64::consts::LN_2, 0.0]]).unwrap());
        assert!((p[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_probabilities(&Matrix::from_rows(&[[1000.0, 0.0]]).unwrap());
        assert_eq!(p[(0, 0)], 1.0);
        assert_eq!(p[(0, 1)], 0.0);
        assert!(p.is_finite());
    }

    #[test]
    fn loss_examples() {
        let labels = Labels::new(vec![0, 1], 2).unwrap();
        let p = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(loss_value(&p, &labels), 0.0);
        let labels = Labels::new(vec![0], 2).unwrap();
        let p = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!((loss_value(&p, &labels) - core::f64::consts::LN_2).abs() < 1e-15);
        let p = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!((loss_value(&p, &labels) - 690.775_527_898_213_7).abs() < 1e-9);
    }

    #[test]
    fn logit_gradient_examples() {
        let labels = Labels::new(vec![0], 2).unwrap();
        let g = backward_logits(&Matrix::from_rows(&[[0.7, 0.3]]).unwrap(), &labels);
        assert!((g[(0, 0)] + 0.3).abs() < 1e-15);
        assert!((g[(0, 1)] - 0.3).abs() < 1e-15);
        let g = backward_logits(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &labels);
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_factors() {
        let labels = Labels::new(vec![0], 3).unwrap();
        let cfg = LossConfig::new(LossVariant::NpcFace);
        let c = single(&[0.3, 0.5, 0.1]);
        let aux = npc_aux(vec![false, true, false], &labels, 0.45);
        assert_eq!(cosine_factor(&c, &labels, &cfg, Some(&aux), 0, 2).unwrap(), 64.0);
        assert!((cosine_factor(&c, &labels, &cfg, Some(&aux), 0, 1).unwrap() - 70.4).abs() < 1e-12);

        let arc = LossConfig::new(LossVariant::ArcFace).with_margin(0.4);
        let c = single(&[1.0, 0.0, 0.0]);
        let f = cosine_factor(&c, &labels, &arc, None, 0, 0).unwrap();
        assert!((f - 64.0 * libm::cos(0.4)).abs() < 1e-12);

        let cos = LossConfig::new(LossVariant::CosFace);
        assert_eq!(cosine_factor(&c, &labels, &cos, None, 0, 0).unwrap(), 64.0);
    }

    #[test]
    fn zero_cosine_gradient_gives_zero_parameter_gradients() {
        let f = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]).unwrap();
        let w = Matrix::from_rows(&[[0.3, 0.3], [1.0, 0.0], [0.0, -2.0]]).unwrap();
        let (df, dw) = backward_parameters(&Matrix::zeros(2, 3), &f, &w).unwrap();
        assert_eq!(df.max_abs(), 0.0);
        assert_eq!(dw.max_abs(), 0.0);
    }

    #[test]
    fn parallel_pair_is_stationary() {
        let f = Matrix::from_rows(&[[2.0, 4.0, -1.0]]).unwrap();
        let w = Matrix::from_rows(&[[1.0, 2.0, -0.5]]).unwrap();
        let (df, dw) = backward_parameters(&Matrix::from_rows(&[[1.0]]).unwrap(), &f, &w).unwrap();
        assert!(df.max_abs() < 1e-15);
        assert!(dw.max_abs() < 1e-15);
    }

    #[test]
    fn backward_parameters_zero_norm() {
        let f = Matrix::zeros(1, 2);
        let w = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(
            backward_parameters(&Matrix::zeros(1, 1), &f, &w),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in LossVariant::ALL {
            assert_eq!(LossVariant::parse(v.name()), Some(v));
        }
        assert_eq!(LossVariant::parse("MV-Softmax"), Some(LossVariant::MvSoftmax));
        assert_eq!(LossVariant::parse("sphereface"), None);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::new(LossVariant::NpcFace).validate().is_ok());
        let mut c = LossConfig::new(LossVariant::NpcFace);
        c.t = 0.9;
        assert!(c.validate().is_err());
        let mut c = LossConfig::new(LossVariant::NpcFace);
        c.m0 = 3.0;
        c.m1 = 0.2;
        assert!(c.validate().is_err());
        assert!(LossConfig::new(LossVariant::ArcFace)
            .with_scale(0.0)
            .validate()
            .is_err());
    }

    #[test]
    fn labels_are_validated() {
        assert_eq!(
            Labels::new(vec![0, 3], 3).unwrap_err(),
            Error::InvalidLabel { label: 3, n_classes: 3 }
        );
    }
}
