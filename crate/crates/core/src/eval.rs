//! Verification and identification metrics over embeddings.
//!
//! Scores are cosine similarities; a pair is accepted when its score is at
//! least the threshold. All tie-breaking goes to the lowest index so results
//! are reproducible bit for bit.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{UnitRows, DEFAULT_EPS};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn flags(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.same).collect()
    }

    /// Cosine score of every pair.
    pub fn scores(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        let unit = UnitRows::new(embeddings, DEFAULT_EPS)?;
        Ok(self
            .pairs
            .iter()
            .map(|p| dot(unit.unit().row(p.a), unit.unit().row(p.b)))
            .collect())
    }
}

/// Seeded sampling without replacement of `n_positive` same-class and
/// `n_negative` cross-class index pairs `(a, b)` with `a < b`.
pub fn build_pairs(labels: &[usize], n_positive: usize, n_negative: usize, seed: u64) -> Result<PairSet> {
    if n_positive == 0 || n_negative == 0 {
        return Err(Error::InvalidConfig("need at least one positive and one negative pair"));
    }
    let n = labels.len();
    let mut rng = crate::seed::rng(seed);

    let mut positives: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if labels[a] == labels[b] {
                positives.push((a, b));
            }
        }
    }
    let total = n * n.saturating_sub(1) / 2;
    let available_neg = total - positives.len();
    if n_positive > positives.len() {
        return Err(Error::InfeasiblePairCount {
            kind: "positive",
            requested: n_positive,
            available: positives.len(),
        });
    }
    if n_negative > available_neg {
        return Err(Error::InfeasiblePairCount {
            kind: "negative",
            requested: n_negative,
            available: available_neg,
        });
    }
    let (chosen, _) = positives.partial_shuffle(&mut rng, n_positive);
    let mut pairs: Vec<Pair> = chosen.iter().map(|&(a, b)| Pair { a, b, same: true }).collect();

    if 2 * n_negative >= available_neg {
        let mut negatives: Vec<(usize, usize)> = Vec::with_capacity(available_neg);
        for a in 0..n {
            for b in a + 1..n {
                if labels[a] != labels[b] {
                    negatives.push((a, b));
                }
            }
        }
        let (chosen, _) = negatives.partial_shuffle(&mut rng, n_negative);
        pairs.extend(chosen.iter().map(|&(a, b)| Pair { a, b, same: false }));
    } else {
        let mut seen = BTreeSet::new();
        while seen.len() < n_negative {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b || labels[a] == labels[b] {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                pairs.push(Pair {
                    a: key.0,
                    b: key.1,
                    same: false,
                });
            }
        }
    }
    Ok(PairSet { pairs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

/// Operating points ordered by increasing threshold. The last point has
/// threshold `+inf` and rejects everything.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_positive: usize,
    pub n_negative: usize,
}

fn check_scores(scores: &[f64], flags: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != flags.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: flags.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::DegenerateInput("scores must be finite"));
    }
    let pos = flags.iter().filter(|&&f| f).count();
    let neg = flags.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput(
            "need at least one positive and one negative score",
        ));
    }
    Ok((pos, neg))
}

pub fn roc(scores: &[f64], flags: &[bool]) -> Result<RocCurve> {
    let (n_pos, n_neg) = check_scores(scores, flags)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut points = Vec::new();
    points.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tar: 0.0,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if flags[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            far: fp as f64 / n_neg as f64,
            tar: tp as f64 / n_pos as f64,
        });
    }
    points.reverse();
    Ok(RocCurve {
        points,
        n_positive: n_pos,
        n_negative: n_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TarAtFar {
    pub far_target: f64,
    pub tar: f64,
    pub threshold: f64,
    pub far: f64,
    /// No finite threshold reaches the target; the reported TAR is 0.
    pub all_rejected: bool,
}

/// TAR at the smallest threshold whose FAR does not exceed `far_target`
/// (step rule, no interpolation).
pub fn tar_at_far(curve: &RocCurve, far_target: f64) -> Result<TarAtFar> {
    if !(far_target > 0.0 && far_target <= 1.0) {
        return Err(Error::InvalidConfig("FAR target must lie in (0, 1]"));
    }
    let p = curve
        .points
        .iter()
        .find(|p| p.far <= far_target)
        .expect("the +inf point always has FAR 0");
    Ok(TarAtFar {
        far_target,
        tar: p.tar,
        threshold: p.threshold,
        far: p.far,
        all_rejected: p.threshold == f64::INFINITY,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationResult {
    pub rank1_accuracy: f64,
    pub n_correct: usize,
    pub n_probes: usize,
    pub n_gallery: usize,
    pub n_distractors: usize,
}

/// Rank-1 identification over `gallery` followed by `distractors`. The
/// best-scoring candidate wins; equal scores go to the lower index, so a
/// gallery entry beats a distractor with the same score.
pub fn rank1_identification(
    probes: &Matrix,
    probe_labels: &[usize],
    gallery: &Matrix,
    gallery_labels: &[usize],
    distractors: &Matrix,
) -> Result<IdentificationResult> {
    if probes.rows() != probe_labels.len() || gallery.rows() != gallery_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probes.rows(),
            actual: probe_labels.len(),
        });
    }
    let d = probes.cols();
    for m in [gallery, distractors] {
        if m.rows() > 0 && m.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: m.cols(),
            });
        }
    }
    for (probe, &label) in probe_labels.iter().enumerate() {
        if !gallery_labels.contains(&label) {
            return Err(Error::MissingMate { probe, label });
        }
    }
    let p = UnitRows::new(probes, DEFAULT_EPS)?;
    let g = UnitRows::new(gallery, DEFAULT_EPS)?;
    let x = if distractors.rows() > 0 {
        Some(UnitRows::new(distractors, DEFAULT_EPS)?)
    } else {
        None
    };

    let mut correct = 0;
    for (i, &label) in probe_labels.iter().enumerate() {
        let q = p.unit().row(i);
        let mut best = f64::NEG_INFINITY;
        let mut best_label = None;
        for (j, row) in g.unit().iter_rows().enumerate() {
            let s = dot(q, row);
            if s > best {
                best = s;
                best_label = Some(gallery_labels[j]);
            }
        }
        if let Some(x) = &x {
            for row in x.unit().iter_rows() {
                let s = dot(q, row);
                if s > best {
                    best = s;
                    best_label = None;
                }
            }
        }
        if best_label == Some(label) {
            correct += 1;
        }
    }
    let n = probe_labels.len();
    Ok(IdentificationResult {
        rank1_accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        n_correct: correct,
        n_probes: n,
        n_gallery: gallery.rows(),
        n_distractors: distractors.rows(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KFoldResult {
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Accuracy-maximizing threshold over `(score, flag)` items; ties go to the
/// lowest threshold. Candidates are the distinct scores and `+inf`.
pub fn best_threshold(scores: &[f64], flags: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n = scores.len();
    let total_pos = flags.iter().filter(|&&f| f).count();

    // Threshold at the k-th smallest distinct score: items below it are
    // rejected. Running counts of rejected positives/negatives.
    let (mut rej_pos, mut rej_neg) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, -1.0);
    let mut k = 0;
    while k < n {
        let t = scores[order[k]];
        let correct = (total_pos - rej_pos) + rej_neg;
        let acc = correct as f64 / n as f64;
        if acc > best.1 {
            best = (t, acc);
        }
        while k < n && scores[order[k]] == t {
            if flags[order[k]] {
                rej_pos += 1;
            } else {
                rej_neg += 1;
            }
            k += 1;
        }
    }
    let acc = rej_neg as f64 / n as f64;
    if acc > best.1 {
        best = (f64::INFINITY, acc);
    }
    best
}

fn accuracy_at(scores: &[f64], flags: &[bool], threshold: f64) -> f64 {
    let correct = scores
        .iter()
        .zip(flags)
        .filter(|(&s, &f)| (s >= threshold) == f)
        .count();
    correct as f64 / scores.len() as f64
}

/// Seeded k-fold protocol: each fold is scored at the threshold that
/// maximizes accuracy on the remaining folds.
pub fn kfold_threshold_accuracy(scores: &[f64], flags: &[bool], k: usize, seed: u64) -> Result<KFoldResult> {
    if scores.len() != flags.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: flags.len(),
        });
    }
    if k < 2 || scores.len() < k {
        return Err(Error::InsufficientPairs {
            pairs: scores.len(),
            folds: k,
        });
    }
    let n = scores.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut crate::seed::rng(seed));

    let mut fold_accuracies = Vec::with_capacity(k);
    let mut thresholds = Vec::with_capacity(k);
    for f in 0..k {
        let (lo, hi) = (f * n / k, (f + 1) * n / k);
        let (mut tr_s, mut tr_f, mut te_s, mut te_f) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (pos, &idx) in perm.iter().enumerate() {
            if (lo..hi).contains(&pos) {
                te_s.push(scores[idx]);
                te_f.push(flags[idx]);
            } else {
                tr_s.push(scores[idx]);
                tr_f.push(flags[idx]);
            }
        }
        let (t, _) = best_threshold(&tr_s, &tr_f);
        thresholds.push(t);
        fold_accuracies.push(accuracy_at(&te_s, &te_f, t));
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(KFoldResult {
        mean_accuracy,
        fold_accuracies,
        thresholds,
    })
}
