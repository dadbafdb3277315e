//! Class-to-image constraint pairs and their squared hinge losses.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};

/// Above this many pairs, cross-class pairs are subsampled.
pub const FULL_ENUMERATION_LIMIT: usize = 1_000_000;
/// Cross-class pairs kept per same-class pair when subsampling.
pub const CROSS_PER_SAME: usize = 10;

/// Score thresholds: same-class scores should reach `l`, cross-class
/// scores should stay below `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub l: f64,
    pub u: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { l: 2.0, u: -2.0 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.l.is_finite() && self.u.is_finite() && self.l > self.u,
            "thresholds need l > u, got l={} u={}",
            self.l,
            self.u
        );
        Ok(())
    }

    /// Midpoint `(l + u) / 2`.
    pub fn boundary(&self) -> f64 {
        0.5 * (self.l + self.u)
    }
}

/// Which (class, image) pairs enter the loss, with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    /// `class_of[j]` is the row index of image `j`'s class.
    pub class_of: Vec<usize>,
    /// Per-pair weight; zero excludes the pair.
    pub weight: DMatrix<f64>,
    pub same_count: usize,
    pub cross_count: usize,
}

impl PairSet {
    /// All pairs, or every same-class pair plus a seeded uniform sample of
    /// cross-class pairs when there are too many.
    pub fn build(n_classes: usize, class_of: &[usize], seed: u64) -> Result<Self> {
        let n = class_of.len();
        ensure_arg!(n >= 1, "no training images");
        ensure_arg!(
            class_of.iter().all(|&c| c < n_classes),
            "image label outside the {n_classes} training classes"
        );
        let mut weight = DMatrix::from_element(n_classes, n, 1.0);
        let same = n;
        let cross_total = n * (n_classes - 1);
        let mut cross = cross_total;
        if n * n_classes > FULL_ENUMERATION_LIMIT {
            let keep = (CROSS_PER_SAME * same).min(cross_total);
            let cross_pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|j| (0..n_classes).filter(move |&i| i != class_of[j]).map(move |i| (i, j)))
                .collect();
            weight.fill(0.0);
            for (j, &c) in class_of.iter().enumerate() {
                weight[(c, j)] = 1.0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in index::sample(&mut rng, cross_pairs.len(), keep) {
                let (i, j) = cross_pairs[k];
                weight[(i, j)] = 1.0;
            }
            cross = keep;
        }
        Ok(Self {
            class_of: class_of.to_vec(),
            weight,
            same_count: same,
            cross_count: cross,
        })
    }

    pub fn is_same(&self, class: usize, image: usize) -> bool {
        self.class_of[image] == class
    }
}

/// Sum of weighted squared hinges and the matrix of derivatives with
/// respect to each score. Cross-class terms are multiplied by `cross_weight`.
pub fn hinge_loss(
    scores: &DMatrix<f64>,
    pairs: &PairSet,
    t: Thresholds,
    cross_weight: f64,
) -> (f64, DMatrix<f64>) {
    let mut loss = 0.0;
    let mut d = DMatrix::zeros(scores.nrows(), scores.ncols());
    for j in 0..scores.ncols() {
        for i in 0..scores.nrows() {
            let w = pairs.weight[(i, j)];
            if w == 0.0 {
                continue;
            }
            let s = scores[(i, j)];
            if pairs.is_same(i, j) {
                let gap = (t.l - s).max(0.0);
                loss += w * gap * gap;
                d[(i, j)] = -2.0 * w * gap;
            } else {
                let gap = (s - t.u).max(0.0);
                loss += cross_weight * w * gap * gap;
                d[(i, j)] = 2.0 * cross_weight * w * gap;
            }
        }
    }
    (loss, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_zero_when_satisfied() {
        let pairs = PairSet::build(2, &[0, 1], 0).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[2.5, -3.0, -2.0, 2.0]);
        let (loss, d) = hinge_loss(&s, &pairs, Thresholds::default(), 1.0);
        assert_eq!(loss, 0.0);
        assert_eq!(d.amax(), 0.0);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 0.0, 2.0]);
        let (loss, _) = hinge_loss(&s, &pairs, Thresholds::default(), 3.0);
        assert_eq!(loss, 1.0 + 3.0 * 4.0);
    }

    #[test]
    fn subsampling_keeps_same_pairs() {
        let n = 2000;
        let classes = 600;
        let labels: Vec<usize> = (0..n).map(|j| j % classes).collect();
        let p = PairSet::build(classes, &labels, 3).unwrap();
        assert_eq!(p.cross_count, CROSS_PER_SAME * n);
        assert_eq!(p.weight.sum() as usize, n + CROSS_PER_SAME * n);
        assert!((0..n).all(|j| p.weight[(labels[j], j)] == 1.0));
        assert_eq!(p, PairSet::build(classes, &labels, 3).unwrap());
    }

    #[test]
    fn thresholds_checked() {
        assert!(Thresholds { l: -1.0, u: 1.0 }.validate().is_err());
        assert_eq!(Thresholds::default().boundary(), 0.0);
    }
}
