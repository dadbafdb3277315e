//! Predicted classifiers and how they score images.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::io;

/// Hyperplane over augmented visual vectors; the last entry is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub c: DVector<f64>,
}

impl LinearClassifier {
    pub fn new(c: DVector<f64>) -> Result<Self> {
        ensure_arg!(!c.is_empty(), "empty classifier");
        ensure_arg!(c.iter().all(|v| v.is_finite()), "classifier has non-finite entries");
        Ok(Self { c })
    }

    /// `cᵀx` for an augmented vector `x`.
    pub fn score(&self, x: &DVector<f64>) -> Result<f64> {
        ensure_arg!(
            x.len() == self.c.len(),
            "image vector has {} entries, classifier has {}",
            x.len(),
            self.c.len()
        );
        Ok(self.c.dot(x))
    }

    /// Scores every row of an augmented image matrix.
    pub fn score_rows(&self, x: &nalgebra::DMatrix<f64>) -> Result<DVector<f64>> {
        ensure_arg!(x.ncols() == self.c.len(), "image matrix width does not match the classifier");
        Ok(x * &self.c)
    }
}

/// Kernel expansion over `N` anchor images plus a bias entry.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelClassifier {
    pub beta: DVector<f64>,
}

impl KernelClassifier {
    pub fn new(beta: DVector<f64>) -> Result<Self> {
        ensure_arg!(beta.len() >= 2, "kernel classifier needs at least one anchor and a bias");
        ensure_arg!(beta.iter().all(|v| v.is_finite()), "classifier has non-finite entries");
        Ok(Self { beta })
    }

    pub fn n_anchors(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn bias(&self) -> f64 {
        self.beta[self.beta.len() - 1]
    }

    pub fn coefficients(&self) -> DVector<f64> {
        self.beta.rows(0, self.n_anchors()).into_owned()
    }

    /// `βᵀ [k(x); 1]` given the kernel column `k(x)` over the anchors.
    pub fn score(&self, kx: &DVector<f64>) -> Result<f64> {
        ensure_arg!(
            kx.len() == self.n_anchors(),
            "kernel column has {} entries, classifier has {} anchors",
            kx.len(),
            self.n_anchors()
        );
        Ok(self.beta.rows(0, self.n_anchors()).dot(kx) + self.bias())
    }

    /// Scores every column of an anchors × images kernel matrix.
    pub fn score_columns(&self, k: &nalgebra::DMatrix<f64>) -> Result<DVector<f64>> {
        ensure_arg!(k.nrows() == self.n_anchors(), "kernel matrix height does not match the anchors");
        let coef = self.beta.rows(0, self.n_anchors());
        Ok(k.tr_mul(&coef).add_scalar(self.bias()))
    }
}

/// Either kind of predicted classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Linear(LinearClassifier),
    Kernel(KernelClassifier),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Linear,
    Kernel,
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Linear(_) => ClassifierKind::Linear,
            Classifier::Kernel(_) => ClassifierKind::Kernel,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        match self {
            Classifier::Linear(c) => &c.c,
            Classifier::Kernel(k) => &k.beta,
        }
    }

    /// Writes the coefficients as a one-column matrix.
    pub fn save(&self, path: &Path) -> Result<()> {
        let v = self.values();
        io::write_matrix(path, &nalgebra::DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    pub fn load(path: &Path, kind: ClassifierKind) -> Result<Self> {
        let m = io::read_matrix(path)?;
        if m.ncols() != 1 {
            return Err(Error::load(path, "classifier file must hold a single column"));
        }
        let v = m.column(0).into_owned();
        Ok(match kind {
            ClassifierKind::Linear => Classifier::Linear(LinearClassifier::new(v)?),
            ClassifierKind::Kernel => Classifier::Kernel(KernelClassifier::new(v)?),
        })
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}
