//! Synthetic identities on the unit sphere.
//!
//! Class centers are uniform on `S^{dim-1}`; a `crowding` fraction of them is
//! re-drawn next to an earlier center so that some identities look alike.
//! Samples are the center plus isotropic Gaussian noise of standard
//! deviation `1/sqrt(concentration)` per coordinate, projected back onto the
//! sphere.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::norm;
use crate::loss::Labels;
use crate::matrix::{dot, Matrix};

/// Proposal budget for each crowded center.
pub const MAX_CROWDING_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Cluster tightness; larger is tighter.
    pub concentration: f64,
    /// Fraction of centers placed next to an existing center.
    pub crowding: f64,
    /// Minimum cosine between a crowded center and its anchor.
    pub min_center_cosine: f64,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("dataset needs at least 2 classes"));
        }
        if self.samples_per_class < 1 {
            return Err(Error::InvalidConfig("samples_per_class must be >= 1"));
        }
        if self.input_dim < 1 {
            return Err(Error::InvalidConfig("input_dim must be >= 1"));
        }
        if !(self.concentration > 0.0) {
            return Err(Error::InvalidConfig("concentration must be positive"));
        }
        if !(0.0..=1.0).contains(&self.crowding) {
            return Err(Error::InvalidConfig("crowding must lie in [0, 1]"));
        }
        if !self.min_center_cosine.is_finite() {
            return Err(Error::InvalidConfig("min_center_cosine must be finite"));
        }
        Ok(())
    }

    /// Number of centers placed by the crowding procedure.
    pub fn n_crowded(&self) -> usize {
        let n = libm::round(self.crowding * self.n_classes as f64) as usize;
        n.min(self.n_classes - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// `n_classes x input_dim`, unit rows.
    pub centers: Matrix,
    /// Class-major samples, unit rows.
    pub inputs: Matrix,
    pub labels: Labels,
    /// For each crowded center, the index of its anchor.
    pub crowded: Vec<(usize, usize)>,
}

pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = crate::seed::rng(spec.seed);
    let dim = spec.input_dim;
    let n_plain = spec.n_classes - spec.n_crowded();

    let mut centers = Matrix::zeros(spec.n_classes, dim);
    let mut crowded = Vec::new();
    for k in 0..spec.n_classes {
        let center = if k < n_plain {
            uniform_on_sphere(&mut rng, dim)
        } else {
            let anchor = rng.random_range(0..k);
            let c = crowded_center(&mut rng, centers.row(anchor), spec.min_center_cosine)?;
            crowded.push((k, anchor));
            c
        };
        centers.row_mut(k).copy_from_slice(&center);
    }

    let (inputs, labels) = sample_around(&mut rng, &centers, spec.samples_per_class, spec.concentration);
    Ok(SyntheticDataset {
        centers,
        inputs,
        labels: Labels::new(labels, spec.n_classes)?,
        crowded,
    })
}

/// Draws `per_class` noisy unit samples around every center, class-major.
pub fn sample_around<R: Rng + ?Sized>(
    rng: &mut R,
    centers: &Matrix,
    per_class: usize,
    concentration: f64,
) -> (Matrix, Vec<usize>) {
    let dim = centers.cols();
    let sigma = 1.0 / libm::sqrt(concentration);
    let mut inputs = Matrix::zeros(centers.rows() * per_class, dim);
    let mut labels = Vec::with_capacity(centers.rows() * per_class);
    let mut row = 0;
    for k in 0..centers.rows() {
        for _ in 0..per_class {
            let out = inputs.row_mut(row);
            loop {
                for (o, c) in out.iter_mut().zip(centers.row(k)) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = c + sigma * z;
                }
                let n = norm(out);
                if n > 0.0 {
                    out.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
            labels.push(k);
            row += 1;
        }
    }
    (inputs, labels)
}

pub fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn crowded_center<R: Rng + ?Sized>(rng: &mut R, anchor: &[f64], target: f64) -> Result<Vec<f64>> {
    let dim = anchor.len();
    // Perturbation norm whose expected cosine to the anchor equals the target.
    let spread = if target <= 0.0 {
        None
    } else {
        Some(libm::sqrt((1.0 / (target * target) - 1.0).max(1e-6)))
    };
    let per_coord = spread.map(|s| s / libm::sqrt(dim as f64));
    for _ in 0..MAX_CROWDING_ATTEMPTS {
        let candidate = match per_coord {
            None => uniform_on_sphere(rng, dim),
            Some(scale) => {
                let v: Vec<f64> = anchor
                    .iter()
                    .map(|a| {
                        let z: f64 = rng.sample(StandardNormal);
                        a + scale * z
                    })
                    .collect();
                let n = norm(&v);
                if n <= 1e-12 {
                    continue;
                }
                v.into_iter().map(|x| x / n).collect()
            }
        };
        if dot(&candidate, anchor) >= target {
            return Ok(candidate);
        }
    }
    Err(Error::InfeasibleCrowding {
        target,
        attempts: MAX_CROWDING_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            n_classes: 20,
            samples_per_class: 5,
            input_dim: 16,
            concentration: 50.0,
            crowding: 0.5,
            min_center_cosine: 0.8,
            seed: 11,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_dataset(&spec()).unwrap();
        let b = generate_dataset(&spec()).unwrap();
        assert_eq!(a, b);
        let mut other = spec();
        other.seed = 12;
        assert_ne!(generate_dataset(&other).unwrap().inputs, a.inputs);
    }

    #[test]
    fn huge_concentration_collapses_onto_centers() {
        let mut s = spec();
        s.concentration = 1e9;
        let d = generate_dataset(&s).unwrap();
        for (i, &y) in d.labels.iter().enumerate() {
            assert!(dot(d.inputs.row(i), d.centers.row(y)) > 0.999);
        }
    }

    #[test]
    fn crowded_centers_meet_target() {
        let d = generate_dataset(&spec()).unwrap();
        assert_eq!(d.crowded.len(), 10);
        for &(k, a) in &d.crowded {
            assert!(a < k);
            assert!(dot(d.centers.row(k), d.centers.row(a)) >= 0.8);
        }
        assert!(d.inputs.iter_rows().all(|r| (norm(r) - 1.0).abs() < 1e-12));
        assert_eq!(d.labels.len(), 100);
        assert_eq!(d.labels[5], 1);
    }

    #[test]
    fn unreachable_target_is_infeasible() {
        let mut s = spec();
        s.min_center_cosine = 1.0;
        assert_eq!(
            generate_dataset(&s).unwrap_err(),
            Error::InfeasibleCrowding {
                target: 1.0,
                attempts: MAX_CROWDING_ATTEMPTS
            }
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec();
        s.n_classes = 1;
        assert!(generate_dataset(&s).is_err());
        let mut s = spec();
        s.crowding = 1.5;
        assert!(generate_dataset(&s).is_err());
    }
}
