//! Normalization, cosine similarity and the shifted-cosine primitive behind
//! every angular margin.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Norm threshold below which a vector counts as degenerate.
pub const DEFAULT_EPS: f64 = 1e-12;

/// A vector with Euclidean norm 1 (up to rounding).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

pub fn normalize(v: &[f64], eps: f64) -> Result<UnitVector> {
    if v.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
    }
    let n = norm(v);
    if !(n >= eps) {
        return Err(Error::ZeroNorm { norm: n, eps });
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Row-normalized copy of a matrix together with the original row norms,
/// which the backward pass through the normalization needs.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRows {
    unit: Matrix,
    norms: Vec<f64>,
}

impl UnitRows {
    pub fn new(raw: &Matrix, eps: f64) -> Result<Self> {
        if raw.cols() == 0 {
            return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
        }
        let mut unit = raw.clone();
        let mut norms = Vec::with_capacity(raw.rows());
        for i in 0..raw.rows() {
            let row = unit.row_mut(i);
            let n = norm(row);
            if !(n >= eps) {
                return Err(Error::ZeroNorm { norm: n, eps });
            }
            row.iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        Ok(Self { unit, norms })
    }

    pub fn unit(&self) -> &Matrix {
        &self.unit
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn rows(&self) -> usize {
        self.unit.rows()
    }

    pub fn dim(&self) -> usize {
        self.unit.cols()
    }

    /// Maps a gradient with respect to unit row `i` back to the raw row:
    /// `(g - <g, u> u) / |x|`.
    pub fn backward_row(&self, i: usize, grad_unit: &[f64], out: &mut [f64]) {
        let u = self.unit.row(i);
        let radial = dot(grad_unit, u);
        let inv = 1.0 / self.norms[i];
        for ((o, g), ui) in out.iter_mut().zip(grad_unit).zip(u) {
            *o = (g - radial * ui) * inv;
        }
    }
}

/// `N x C` cosine similarities between unit features and unit class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix(Matrix);

impl CosineMatrix {
    /// Wraps precomputed cosines, clamping every entry into `[-1, 1]`.
    pub fn from_matrix(mut m: Matrix) -> Self {
        m.as_mut_slice().iter_mut().for_each(|c| *c = c.clamp(-1.0, 1.0));
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

pub fn cosine_matrix(features: &UnitRows, weights: &UnitRows) -> Result<CosineMatrix> {
    cosine_matrix_unit(features.unit(), weights.unit())
}

/// Cosines between rows already known to be unit length.
pub fn cosine_matrix_unit(features: &Matrix, weights: &Matrix) -> Result<CosineMatrix> {
    if features.cols() != weights.cols() {
        return Err(Error::DimensionMismatch {
            expected: features.cols(),
            actual: weights.cols(),
        });
    }
    let mut out = Matrix::zeros(features.rows(), weights.rows());
    for i in 0..features.rows() {
        let x = features.row(i);
        let row = out.row_mut(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = dot(x, weights.row(j)).clamp(-1.0, 1.0);
        }
    }
    Ok(CosineMatrix(out))
}

/// `cos(min(arccos(c) + m, pi))`.
///
/// Returns `c` unchanged for `m == 0`. Once the shifted angle passes `pi`
/// the result saturates at `-1`.
pub fn cos_shifted(c: f64, m: f64) -> f64 {
    if m == 0.0 {
        return c;
    }
    let c = c.clamp(-1.0, 1.0);
    if libm::acos(c) + m >= PI {
        return -1.0;
    }
    let sin_theta = libm::sqrt((1.0 - c * c).max(0.0));
    c * libm::cos(m) - sin_theta * libm::sin(m)
}

/// Derivative of [`cos_shifted`] with respect to `c`, i.e.
/// `sin(theta + m) / sin(theta)`.
///
/// At `sin(theta) == 0` the quotient is replaced by `cos(m)`; past the `pi`
/// clamp it is zero.
pub fn cos_shifted_grad(c: f64, m: f64) -> f64 {
    if m == 0.0 {
        return 1.0;
    }
    let c = c.clamp(-1.0, 1.0);
    if libm::acos(c) + m >= PI {
        return 0.0;
    }
    let sin_theta = libm::sqrt((1.0 - c * c).max(0.0));
    if sin_theta == 0.0 {
        return libm::cos(m);
    }
    libm::cos(m) + c * libm::sin(m) / sin_theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four_five() {
        let u = normalize(&[3.0, 4.0], DEFAULT_EPS).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((u.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_is_unchanged() {
        let u = normalize(&[1.0, 0.0, 0.0], DEFAULT_EPS).unwrap();
        assert_eq!(u.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_is_error() {
        assert!(matches!(
            normalize(&[0.0, 0.0], DEFAULT_EPS),
            Err(Error::ZeroNorm { .. })
        ));
        assert!(matches!(
            UnitRows::new(&Matrix::zeros(2, 3), DEFAULT_EPS),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn cosine_of_self_is_one_and_orthogonal_is_zero() {
        let x = UnitRows::new(&Matrix::from_rows(&[[1.0, 2.0, 2.0]]).unwrap(), DEFAULT_EPS).unwrap();
        let c = cosine_matrix(&x, &x).unwrap();
        assert!((c.get(0, 0) - 1.0).abs() < 1e-15);
        let a = UnitRows::new(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), DEFAULT_EPS).unwrap();
        let b = UnitRows::new(&Matrix::from_rows(&[[0.0, 3.0]]).unwrap(), DEFAULT_EPS).unwrap();
        assert_eq!(cosine_matrix(&a, &b).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn cosine_matrix_matches_per_entry_loop() {
        // 3 x 4 instance, d = 3; oracle recomputes each entry from scratch.
        let f = Matrix::from_rows(&[[0.3, -1.2, 0.5], [2.0, 0.1, -0.7], [-0.4, -0.4, 1.9]]).unwrap();
        let w = Matrix::from_rows(&[[1.0, 0.2, 0.0], [-0.5, 0.5, 0.5], [0.0, 0.0, -2.0], [0.9, -1.1, 0.3]]).unwrap();
        let got = cosine_matrix(
            &UnitRows::new(&f, DEFAULT_EPS).unwrap(),
            &UnitRows::new(&w, DEFAULT_EPS).unwrap(),
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
                for k in 0..3 {
                    xy += f[(i, k)] * w[(j, k)];
                    xx += f[(i, k)] * f[(i, k)];
                    yy += w[(j, k)] * w[(j, k)];
                }
                let expected = xy / (xx.sqrt() * yy.sqrt());
                assert!((got.get(i, j) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = UnitRows::new(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), DEFAULT_EPS).unwrap();
        let b = UnitRows::new(&Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap(), DEFAULT_EPS).unwrap();
        assert!(matches!(cosine_matrix(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cos_shifted_examples() {
        assert!((cos_shifted(1.0, 0.4) - 0.921_060_994_002_885_1).abs() < 1e-12);
        assert_eq!(cos_shifted(0.5, 0.0), 0.5);
        assert_eq!(cos_shifted(-1.0, 0.5), -1.0);
    }

    #[test]
    fn cos_shifted_grad_limits() {
        assert!((cos_shifted_grad(1.0, 0.4) - libm::cos(0.4)).abs() < 1e-15);
        assert_eq!(cos_shifted_grad(-0.99, 0.5), 0.0);
        assert_eq!(cos_shifted_grad(0.3, 0.0), 1.0);
    }

    #[test]
    fn cos_shifted_grad_matches_central_difference() {
        for &(c, m) in &[(0.3, 0.4), (-0.2, 0.5), (0.9, 0.6), (-0.7, 0.2)] {
            let h = 1e-6;
            let fd = (cos_shifted(c + h, m) - cos_shifted(c - h, m)) / (2.0 * h);
            assert!((fd - cos_shifted_grad(c, m)).abs() < 1e-7, "c={c} m={m}");
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 1..12)) {
            prop_assume!(norm(&v) > 1e-6);
            let once = normalize(&v, DEFAULT_EPS).unwrap();
            prop_assert!((norm(once.as_slice()) - 1.0).abs() < 1e-9);
            let twice = normalize(once.as_slice(), DEFAULT_EPS).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cosines_stay_in_range(
            a in proptest::collection::vec(-1e3f64..1e3, 6),
            b in proptest::collection::vec(-1e3f64..1e3, 6),
        ) {
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let m = Matrix::from_rows(&[a.clone(), b.clone(), a]).unwrap();
            let u = UnitRows::new(&m, DEFAULT_EPS).unwrap();
            let c = cosine_matrix(&u, &u).unwrap();
            prop_assert!(c.matrix().as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn cos_shifted_identity_and_bounds(c in -1.0f64..=1.0, m1 in 0.0f64..3.0, m2 in 0.0f64..3.0) {
            prop_assert_eq!(cos_shifted(c, 0.0), c);
            prop_assert!(cos_shifted(c, m1) <= c);
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(cos_shifted(c, hi) <= cos_shifted(c, lo) + 1e-15);
        }
    }
}
