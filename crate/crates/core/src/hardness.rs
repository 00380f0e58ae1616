//! Hard-sample mining, the collaborative margin and the hardness diagnostics
//! (positive/negative distance correlation, mis- vs well-classified overlap).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::CosineMatrix;
use crate::loss::{Labels, PositiveMargin};

/// Binary `N x C` indicator of (sample, class) pairs where the sample is hard
/// to that class. The ground-truth column is always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl HardMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    /// Builds a mask from explicit rows, clearing each sample's label column.
    pub fn from_rows(rows: &[Vec<bool>], labels: &Labels) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: rows.len(),
            });
        }
        let mut mask = Self::empty(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            for (j, &b) in r.iter().enumerate() {
                mask.bits[i * cols + j] = b && j != labels[i];
            }
        }
        Ok(mask)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }

    /// A sample is mis-classified when it is hard to at least one class.
    pub fn is_hard_row(&self, i: usize) -> bool {
        self.row(i).iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// `M_ij = 1` iff `j != y_i` and `cos(theta_ij) > cos(theta_iy + m0)`.
pub fn compute_mask(cosines: &CosineMatrix, labels: &Labels, m0: f64) -> HardMask {
    compute_mask_with(cosines, labels, PositiveMargin::Angular(m0))
}

/// Mask against an arbitrary margined positive cosine.
pub fn compute_mask_with(cosines: &CosineMatrix, labels: &Labels, margin: PositiveMargin) -> HardMask {
    let (n, c) = (cosines.rows(), cosines.cols());
    let mut mask = HardMask::empty(n, c);
    for i in 0..n {
        let y = labels[i];
        let row = cosines.row(i);
        let threshold = margin.apply(row[y]);
        for (j, &cos) in row.iter().enumerate() {
            mask.bits[i * c + j] = j != y && cos > threshold;
        }
    }
    mask
}

/// Per-sample positive margin `m~_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollaborativeMargins(Vec<f64>);

impl CollaborativeMargins {
    pub fn uniform(n: usize, m: f64) -> Self {
        Self(vec![m; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl core::ops::Index<usize> for CollaborativeMargins {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `m0 + m1 * mean(masked cosines)` for rows with hard negatives, `m0`
/// otherwise.
pub fn collaborative_margin(cosines: &CosineMatrix, mask: &HardMask, m0: f64, m1: f64) -> CollaborativeMargins {
    let margins = (0..cosines.rows())
        .map(|i| {
            let (sum, count) = cosines
                .row(i)
                .iter()
                .zip(mask.row(i))
                .filter(|(_, &hard)| hard)
                .fold((0.0, 0usize), |(s, n), (c, _)| (s + c, n + 1));
            if count == 0 {
                m0
            } else {
                m0 + m1 * (sum / count as f64)
            }
        })
        .collect();
    CollaborativeMargins(margins)
}

/// Distances of mis-classified samples to their own class and to the
/// nearest other class, plus their Pearson correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct HardnessReport {
    pub pearson_r: f64,
    pub n_misclassified: usize,
    pub mean_pos_distance: f64,
    pub mean_neg_distance: f64,
    /// `1 - cos(theta_iy)` per mis-classified sample, in row order.
    pub pos_distances: Vec<f64>,
    /// `1 - max_{j != y} cos(theta_ij)`, aligned with `pos_distances`.
    pub neg_distances: Vec<f64>,
}

pub fn hardness_correlation(cosines: &CosineMatrix, labels: &Labels, mask: &HardMask) -> Result<HardnessReport> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..cosines.rows() {
        if !mask.is_hard_row(i) {
            continue;
        }
        let y = labels[i];
        let row = cosines.row(i);
        let nearest = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &c)| c)
            .fold(f64::NEG_INFINITY, f64::max);
        pos.push(1.0 - row[y]);
        neg.push(1.0 - nearest);
    }
    if pos.len() < 2 {
        return Err(Error::InsufficientSamples { found: pos.len() });
    }
    let stats = CoMoments::from_pairs(pos.iter().copied().zip(neg.iter().copied()));
    if stats.m2_x == 0.0 {
        return Err(Error::DegenerateVariance("positive-distance"));
    }
    if stats.m2_y == 0.0 {
        return Err(Error::DegenerateVariance("negative-distance"));
    }
    Ok(HardnessReport {
        pearson_r: stats.correlation(),
        n_misclassified: pos.len(),
        mean_pos_distance: stats.mean_x,
        mean_neg_distance: stats.mean_y,
        pos_distances: pos,
        neg_distances: neg,
    })
}

/// Single-pass (Welford) running moments of a paired series.
struct CoMoments {
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl CoMoments {
    fn from_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut s = Self {
            mean_x: 0.0,
            mean_y: 0.0,
            m2_x: 0.0,
            m2_y: 0.0,
            c_xy: 0.0,
        };
        for (n, (x, y)) in pairs.enumerate() {
            let n = (n + 1) as f64;
            let dx = x - s.mean_x;
            let dy = y - s.mean_y;
            s.mean_x += dx / n;
            s.mean_y += dy / n;
            s.m2_x += dx * (x - s.mean_x);
            s.m2_y += dy * (y - s.mean_y);
            s.c_xy += dx * (y - s.mean_y);
        }
        s
    }

    fn correlation(&self) -> f64 {
        (self.c_xy / libm::sqrt(self.m2_x * self.m2_y)).clamp(-1.0, 1.0)
    }
}

/// Pearson correlation of two equally long series.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples { found: xs.len() });
    }
    let s = CoMoments::from_pairs(xs.iter().copied().zip(ys.iter().copied()));
    if s.m2_x == 0.0 {
        return Err(Error::DegenerateVariance("first"));
    }
    if s.m2_y == 0.0 {
        return Err(Error::DegenerateVariance("second"));
    }
    Ok(s.correlation())
}

/// Equal-width histogram over `[-1, 1]`, normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub count: usize,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }
}

pub fn cosine_histogram(values: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::InvalidConfig("histogram needs at least 2 bins"));
    }
    let edges: Vec<f64> = (0..=n_bins).map(|k| -1.0 + 2.0 * k as f64 / n_bins as f64).collect();
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let pos = (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * n_bins as f64;
        let bin = (libm::floor(pos) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    let total = values.len();
    let mass = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    Ok(Histogram {
        edges,
        mass,
        count: total,
    })
}

/// Histogram intersection `sum_k min(a_k, b_k)`.
pub fn overlap_rate(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

/// Cosine-to-ground-truth distributions of mis-classified and well-classified
/// samples and their overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionOverlap {
    pub bin_edges: Vec<f64>,
    pub histogram_mis: Vec<f64>,
    pub histogram_well: Vec<f64>,
    pub n_mis: usize,
    pub n_well: usize,
    pub overlap_rate: f64,
}

pub fn similarity_distributions(
    cosines: &CosineMatrix,
    labels: &Labels,
    mask: &HardMask,
    n_bins: usize,
) -> Result<DistributionOverlap> {
    let mut mis = Vec::new();
    let mut well = Vec::new();
    for i in 0..cosines.rows() {
        let c = cosines.get(i, labels[i]);
        if mask.is_hard_row(i) {
            mis.push(c);
        } else {
            well.push(c);
        }
    }
    let h_mis = cosine_histogram(&mis, n_bins)?;
    let h_well = cosine_histogram(&well, n_bins)?;
    if mis.is_empty() {
        return Err(Error::EmptyPartition("mis-classified"));
    }
    if well.is_empty() {
        return Err(Error::EmptyPartition("well-classified"));
    }
    Ok(DistributionOverlap {
        overlap_rate: overlap_rate(&h_mis.mass, &h_well.mass),
        bin_edges: h_mis.edges,
        histogram_mis: h_mis.mass,
        histogram_well: h_well.mass,
        n_mis: mis.len(),
        n_well: well.len(),
    })
}

/// Cosine from each mis-classified sample to its nearest non-ground-truth
/// class.
pub fn hard_negative_similarities(cosines: &CosineMatrix, labels: &Labels, mask: &HardMask) -> Vec<f64> {
    (0..cosines.rows())
        .filter(|&i| mask.is_hard_row(i))
        .map(|i| {
            let y = labels[i];
            cosines
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &c)| c)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}
