//! Central-difference verification of the analytic gradients.
//!
//! The mask and collaborative margins are mined once from the unperturbed
//! inputs and held fixed for every perturbed evaluation, matching the
//! frozen-auxiliary backward pass.
//!
//! `L(p + eps) - L(p - eps)` is not formed by subtracting two loss values.
//! With logit scales around 64 most probabilities are tiny and so are most
//! gradient coordinates, far below the rounding noise of a loss of order 10.
//! Instead each row's difference is evaluated directly from the two logit
//! vectors as `log1p(sum_{k != y} q_k expm1(d_k - d_y))`, with `q` the softmax
//! of the minus-side logits and `d` the logit difference. That is the same
//! quantity, but its rounding error scales with the difference itself.
//!
//! Each coordinate uses the five-point central stencil
//! `(8 D(h) - D(2h)) / 12h`, `D(h) = L(p + h) - L(p - h)`, whose truncation
//! error is `O(h^4)`; the plain `D(h) / 2h` leaves an `O(s^3 h^2)` term that
//! alone exceeds 1e-6 relative at these scales.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{cosine_matrix, UnitRows, DEFAULT_EPS};
use crate::loss::{batch_logits, batch_pass, softmax_probabilities, Auxiliaries, Labels, LossConfig};
use crate::matrix::Matrix;
use crate::model::Mlp;

/// Which parameter a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Feature {
        row: usize,
        col: usize,
    },
    Weight {
        row: usize,
        col: usize,
    },
    /// Flat index into tensor `tensor` of [`Mlp::parameters`].
    Model {
        tensor: usize,
        index: usize,
    },
}

impl core::fmt::Display for Coordinate {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Coordinate::Feature { row, col } => write!(f, "feature[{row}][{col}]"),
            Coordinate::Weight { row, col } => write!(f, "class_weight[{row}][{col}]"),
            Coordinate::Model { tensor, index } => write!(f, "model_param[{tensor}][{index}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<Coordinate>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub n_coordinates: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_relative_error: 0.0,
            worst: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            n_coordinates: 0,
        }
    }

    pub fn record(&mut self, coord: Coordinate, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.n_coordinates += 1;
        if err > self.max_relative_error || self.worst.is_none() || err.is_nan() {
            self.max_relative_error = err;
            self.worst = Some(coord);
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
    }

    pub fn merge(mut self, other: GradCheckReport) -> Self {
        if other.max_relative_error > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
            self.worst_analytic = other.worst_analytic;
            self.worst_numeric = other.worst_numeric;
        }
        self.n_coordinates += other.n_coordinates;
        self
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// `L(plus) - L(minus)` for the mean cross-entropy over two logit matrices
/// of the same batch.
pub fn loss_difference(plus: &Matrix, minus: &Matrix, labels: &Labels) -> f64 {
    debug_assert_eq!(plus.shape(), minus.shape());
    let q = softmax_probabilities(minus);
    let mut total = 0.0;
    for i in 0..plus.rows() {
        let (fp, fm, qr) = (plus.row(i), minus.row(i), q.row(i));
        if fp == fm {
            continue;
        }
        let y = labels[i];
        let dy = fp[y] - fm[y];
        let inner: f64 = (0..fp.len())
            .filter(|&k| k != y)
            .map(|k| qr[k] * libm::expm1((fp[k] - fm[k]) - dy))
            .sum();
        total += libm::log1p(inner);
    }
    total / plus.rows() as f64
}

/// Five-point derivative of the loss along one coordinate; `logits_at(delta)`
/// evaluates the logits with that coordinate shifted by `delta`.
fn stencil<F>(labels: &Labels, h: f64, mut logits_at: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<Matrix>,
{
    let d1 = loss_difference(&logits_at(h)?, &logits_at(-h)?, labels);
    let d2 = loss_difference(&logits_at(2.0 * h)?, &logits_at(-2.0 * h)?, labels);
    Ok((8.0 * d1 - d2) / (12.0 * h))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidConfig(
            "finite-difference epsilon must lie in [1e-7, 1e-4]",
        ));
    }
    Ok(())
}

/// Central-difference gradients of the batch loss with respect to every raw
/// feature and class-weight coordinate.
pub fn numeric_gradients(
    features: &Matrix,
    weights: &Matrix,
    labels: &Labels,
    config: &LossConfig,
    frozen: Option<&Auxiliaries>,
    epsilon: f64,
) -> Result<(Matrix, Matrix)> {
    let mut d_features = Matrix::zeros(features.rows(), features.cols());
    let mut d_weights = Matrix::zeros(weights.rows(), weights.cols());
    let mut xf = features.clone();
    for r in 0..features.rows() {
        for c in 0..features.cols() {
            let orig = xf[(r, c)];
            d_features[(r, c)] = stencil(labels, epsilon, |delta| {
                xf[(r, c)] = orig + delta;
                let logits = batch_logits(&xf, weights, labels, config, frozen);
                xf[(r, c)] = orig;
                logits
            })?;
        }
    }
    let mut xw = weights.clone();
    for r in 0..weights.rows() {
        for c in 0..weights.cols() {
            let orig = xw[(r, c)];
            d_weights[(r, c)] = stencil(labels, epsilon, |delta| {
                xw[(r, c)] = orig + delta;
                let logits = batch_logits(features, &xw, labels, config, frozen);
                xw[(r, c)] = orig;
                logits
            })?;
        }
    }
    Ok((d_features, d_weights))
}

/// Mines the auxiliaries of the unperturbed batch.
pub fn freeze_auxiliaries(
    features: &Matrix,
    weights: &Matrix,
    labels: &Labels,
    config: &LossConfig,
) -> Result<Option<Auxiliaries>> {
    let f = UnitRows::new(features, DEFAULT_EPS)?;
    let w = UnitRows::new(weights, DEFAULT_EPS)?;
    let cos = cosine_matrix(&f, &w)?;
    Ok(Auxiliaries::mine(&cos, labels, config))
}

pub fn compare(analytic: (&Matrix, &Matrix), numeric: (&Matrix, &Matrix)) -> GradCheckReport {
    let mut report = GradCheckReport::new();
    for (k, (a, n)) in analytic.0.as_slice().iter().zip(numeric.0.as_slice()).enumerate() {
        let cols = analytic.0.cols();
        report.record(
            Coordinate::Feature {
                row: k / cols,
                col: k % cols,
            },
            *a,
            *n,
        );
    }
    for (k, (a, n)) in analytic.1.as_slice().iter().zip(numeric.1.as_slice()).enumerate() {
        let cols = analytic.1.cols();
        report.record(
            Coordinate::Weight {
                row: k / cols,
                col: k % cols,
            },
            *a,
            *n,
        );
    }
    report
}

/// Analytic versus central-difference gradients of the loss with respect to
/// raw features and raw class weights.
pub fn finite_difference_check(
    features: &Matrix,
    weights: &Matrix,
    labels: &Labels,
    config: &LossConfig,
    epsilon: f64,
) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let frozen = freeze_auxiliaries(features, weights, labels, config)?;
    let pass = batch_pass(features, weights, labels, config, frozen.as_ref())?;
    let (nf, nw) = numeric_gradients(features, weights, labels, config, frozen.as_ref(), epsilon)?;
    Ok(compare(
        (&pass.gradients.d_features, &pass.gradients.d_weights),
        (&nf, &nw),
    ))
}

/// Analytic model-parameter and class-weight gradients of the full
/// `loss(model(inputs))` composite.
pub fn model_analytic_gradients(
    model: &Mlp,
    class_weights: &Matrix,
    inputs: &Matrix,
    labels: &Labels,
    config: &LossConfig,
    frozen: Option<&Auxiliaries>,
) -> Result<(Vec<Vec<f64>>, Matrix)> {
    let (emb, cache) = model.forward(inputs)?;
    let pass = batch_pass(&emb, class_weights, labels, config, frozen)?;
    let grads = model.backward(&cache, &pass.gradients.d_features)?;
    Ok((
        grads.slices().into_iter().map(<[f64]>::to_vec).collect(),
        pass.gradients.d_weights,
    ))
}

/// Central differences over every model parameter and class weight.
pub fn model_numeric_gradients(
    model: &Mlp,
    class_weights: &Matrix,
    inputs: &Matrix,
    labels: &Labels,
    config: &LossConfig,
    frozen: Option<&Auxiliaries>,
    epsilon: f64,
) -> Result<(Vec<Vec<f64>>, Matrix)> {
    let mut probe = model.clone();
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut model_grads = Vec::with_capacity(sizes.len());
    for (t, &len) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(len);
        for k in 0..len {
            let orig = probe.parameters()[t][k];
            g.push(stencil(labels, epsilon, |delta| {
                probe.parameters_mut()[t][k] = orig + delta;
                let logits = probe
                    .embed(inputs)
                    .and_then(|e| batch_logits(&e, class_weights, labels, config, frozen));
                probe.parameters_mut()[t][k] = orig;
                logits
            })?);
        }
        model_grads.push(g);
    }
    let emb = model.embed(inputs)?;
    let mut w = class_weights.clone();
    let mut d_w = Matrix::zeros(w.rows(), w.cols());
    for r in 0..w.rows() {
        for c in 0..w.cols() {
            let orig = w[(r, c)];
            d_w[(r, c)] = stencil(labels, epsilon, |delta| {
                w[(r, c)] = orig + delta;
                let logits = batch_logits(&emb, &w, labels, config, frozen);
                w[(r, c)] = orig;
                logits
            })?;
        }
    }
    Ok((model_grads, d_w))
}

/// End-to-end check through the embedding network.
pub fn model_gradient_check(
    model: &Mlp,
    class_weights: &Matrix,
    inputs: &Matrix,
    labels: &Labels,
    config: &LossConfig,
    epsilon: f64,
) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let emb = model.embed(inputs)?;
    let frozen = freeze_auxiliaries(&emb, class_weights, labels, config)?;
    let (am, aw) = model_analytic_gradients(model, class_weights, inputs, labels, config, frozen.as_ref())?;
    let (nm, nw) = model_numeric_gradients(model, class_weights, inputs, labels, config, frozen.as_ref(), epsilon)?;
    Ok(compare_model((&am, &aw), (&nm, &nw)))
}

pub fn compare_model(analytic: (&[Vec<f64>], &Matrix), numeric: (&[Vec<f64>], &Matrix)) -> GradCheckReport {
    let mut report = GradCheckReport::new();
    for (t, (a, n)) in analytic.0.iter().zip(numeric.0).enumerate() {
        for (index, (av, nv)) in a.iter().zip(n).enumerate() {
            report.record(Coordinate::Model { tensor: t, index }, *av, *nv);
        }
    }
    let cols = analytic.1.cols();
    for (k, (a, n)) in analytic.1.as_slice().iter().zip(numeric.1.as_slice()).enumerate() {
        report.record(
            Coordinate::Weight {
                row: k / cols,
                col: k % cols,
            },
            *a,
            *n,
        );
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{batch_pass, LossVariant};
    use alloc::vec;

    #[test]
    fn loss_difference_matches_plain_subtraction_at_moderate_scale() {
        let labels = Labels::new(vec![0, 2], 3).unwrap();
        let a = Matrix::from_rows(&[[0.3, 0.1, -0.2], [1.0, 0.4, 0.2]]).unwrap();
        let b = Matrix::from_rows(&[[0.1, 0.5, -0.1], [0.2, 0.3, 0.9]]).unwrap();
        let la = crate::loss::loss_value(&softmax_probabilities(&a), &labels);
        let lb = crate::loss::loss_value(&softmax_probabilities(&b), &labels);
        assert!((loss_difference(&a, &b, &labels) - (la - lb)).abs() < 1e-14);
    }

    #[test]
    fn epsilon_range_is_enforced() {
        let f = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let labels = Labels::new(vec![0], 1).unwrap();
        let cfg = LossConfig::new(LossVariant::NormSoftmax);
        assert!(finite_difference_check(&f, &f, &labels, &cfg, 1e-3).is_err());
        assert!(finite_difference_check(&f, &f, &labels, &cfg, 1e-8).is_err());
    }

    #[test]
    fn perfect_one_hot_configuration() {
        // every feature sits on its own class weight; others are orthogonal
        let f = Matrix::identity(4);
        let w = Matrix::identity(4);
        let labels = Labels::new(vec![0, 1, 2, 3], 4).unwrap();
        let cfg = LossConfig::new(LossVariant::NormSoftmax);
        let pass = batch_pass(&f, &w, &labels, &cfg, None).unwrap();
        assert!(pass.gradients.loss < 1e-25);
        let report = finite_difference_check(&f, &w, &labels, &cfg, 1e-4).unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
        assert!((relative_error(1e-13, 0.0) - 0.1).abs() < 1e-15);
    }
}
