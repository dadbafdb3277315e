//! Kernel domain transfer: `Ψ` maps text-kernel columns to coefficients of
//! kernel classifiers over the training images.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::KernelClassifier;
use crate::error::{ensure_arg, Error, Result};
use crate::io;
use crate::linalg;
use crate::linear_dt::TrainingLog;
use crate::numopt::{flatten_row_major, minimize, unflatten_row_major, Objective, OptimizerConfig};
use crate::pairs::{hinge_loss, PairSet, Thresholds};

#[derive(Debug, Clone)]
pub struct KernelDtConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub thresholds: Thresholds,
    pub seed: u64,
    pub optimizer: OptimizerConfig<f64>,
}

impl Default for KernelDtConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.0,
            thresholds: Thresholds::default(),
            seed: 0,
            optimizer: OptimizerConfig {
                max_iterations: 5000,
                gradient_tolerance: 1e-6,
                ..OptimizerConfig::default()
            },
        }
    }
}

/// Appends the bias row of ones to an images × images kernel, giving the
/// `(N + 1) × N` matrix whose columns are `k(x_j)`.
pub fn with_bias_row(k: &DMatrix<f64>) -> DMatrix<f64> {
    k.clone().insert_row(k.nrows(), 1.0)
}

/// `½|Ψ|² + λ1 [Σ_same h_l + r Σ_cross h_u](GΨK) + λ2 |Bᵀ - GΨ|²`.
pub struct KernelDtObjective {
    pub g: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Seen classifiers, `(N + 1) × N_sc`.
    pub b: DMatrix<f64>,
    pub pairs: PairSet,
    pub lambda1: f64,
    pub lambda2: f64,
    pub thresholds: Thresholds,
    /// Weight of cross-class terms: cross pairs per same-class pair.
    pub r: f64,
}

impl KernelDtObjective {
    pub fn new(
        g: &DMatrix<f64>,
        k: &DMatrix<f64>,
        labels: &[usize],
        b: &DMatrix<f64>,
        config: &KernelDtConfig,
    ) -> Result<Self> {
        let n_sc = g.nrows();
        let n = k.ncols();
        linalg::ensure_symmetric(g, 1e-8, "text gram")?;
        ensure_arg!(n_sc >= 2, "need at least two seen classes");
        ensure_arg!(k.nrows() == n + 1, "visual kernel must be (N+1) x N, got {}x{}", k.nrows(), n);
        ensure_arg!(
            k.row(n).iter().all(|&v| v == 1.0),
            "last row of the visual kernel must be the bias row of ones"
        );
        ensure_arg!(labels.len() == n, "{} labels for {n} images", labels.len());
        ensure_arg!(b.shape() == (n + 1, n_sc), "seen classifiers must be {}x{n_sc}", n + 1);
        ensure_arg!(config.lambda1 >= 0.0 && config.lambda2 >= 0.0, "weights must be non-negative");
        config.thresholds.validate()?;
        let pairs = PairSet::build(n_sc, labels, config.seed)?;
        let r = pairs.cross_count as f64 / pairs.same_count as f64;
        ensure_arg!(r > 0.0, "no cross-class pairs");
        Ok(Self {
            g: g.clone(),
            k: k.clone(),
            b: b.clone(),
            pairs,
            lambda1: config.lambda1,
            lambda2: config.lambda2,
            thresholds: config.thresholds,
            r,
        })
    }

    pub fn rows(&self) -> usize {
        self.g.nrows()
    }

    pub fn cols(&self) -> usize {
        self.k.nrows()
    }
}

impl Objective<f64> for KernelDtObjective {
    fn dimension(&self) -> usize {
        self.rows() * self.cols()
    }

    fn value_and_gradient(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let psi = unflatten_row_major(v, self.rows(), self.cols());
        let gpsi = &self.g * &psi;
        let scores = &gpsi * &self.k;
        let (h, dh) = hinge_loss(&scores, &self.pairs, self.thresholds, self.r);
        let resid = gpsi - self.b.transpose();
        let value = 0.5 * psi.norm_squared() + self.lambda1 * h + self.lambda2 * resid.norm_squared();
        let grad = &psi + &self.g * (dh * self.k.transpose() * self.lambda1 + resid * (2.0 * self.lambda2));
        (value, flatten_row_major(&grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTransferMeta {
    pub n_classes: usize,
    pub n_images: usize,
    pub thresholds: Thresholds,
    pub lambda1: f64,
    pub lambda2: f64,
    pub r: f64,
    pub log: TrainingLog,
}

/// Learned `Ψ` (`N_sc × (N + 1)`) with the text gram it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTransfer {
    pub psi: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub thresholds: Thresholds,
    pub lambda1: f64,
    pub lambda2: f64,
    pub r: f64,
    pub log: TrainingLog,
}

impl KernelTransfer {
    pub fn save(&self, psi_path: &Path, g_path: &Path, meta_path: &Path) -> Result<()> {
        io::write_matrix(psi_path, &self.psi)?;
        io::write_matrix(g_path, &self.g)?;
        io::write_json(
            meta_path,
            &KernelTransferMeta {
                n_classes: self.psi.nrows(),
                n_images: self.psi.ncols() - 1,
                thresholds: self.thresholds,
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                r: self.r,
                log: self.log.clone(),
            },
        )
    }

    pub fn load(psi_path: &Path, g_path: &Path, meta_path: &Path) -> Result<Self> {
        let psi = io::read_matrix(psi_path)?;
        let g = io::read_matrix(g_path)?;
        let meta: KernelTransferMeta = io::read_json(meta_path)?;
        if psi.shape() != (meta.n_classes, meta.n_images + 1) || g.shape() != (meta.n_classes, meta.n_classes) {
            return Err(Error::load(psi_path, "matrix shapes disagree with the metadata"));
        }
        Ok(Self {
            psi,
            g,
            thresholds: meta.thresholds,
            lambda1: meta.lambda1,
            lambda2: meta.lambda2,
            r: meta.r,
            log: meta.log,
        })
    }
}

/// Trains `Ψ` from the text gram `g`, the bias-augmented visual kernel `k`,
/// image class indices, and seen classifiers `b`.
pub fn train_kernel_dt(
    g: &DMatrix<f64>,
    k: &DMatrix<f64>,
    labels: &[usize],
    b: &DMatrix<f64>,
    config: &KernelDtConfig,
) -> Result<KernelTransfer> {
    config.optimizer.validate()?;
    let objective = KernelDtObjective::new(g, k, labels, b, config)?;
    let start = DVector::zeros(objective.dimension());
    let initial = objective.value(&start);
    let min = minimize(&objective, start, &config.optimizer)?;
    Ok(KernelTransfer {
        psi: unflatten_row_major(&min.point, objective.rows(), objective.cols()),
        g: objective.g.clone(),
        thresholds: config.thresholds,
        lambda1: config.lambda1,
        lambda2: config.lambda2,
        r: objective.r,
        log: TrainingLog::from_minimum(initial, &min, &objective.pairs),
    })
}

/// `Ψᵀ g(t_*)`.
pub fn dt_kernel_classifier(model: &KernelTransfer, g_star: &DVector<f64>) -> Result<KernelClassifier> {
    ensure_arg!(
        g_star.len() == model.psi.nrows(),
        "text kernel column has {} entries, expected {}",
        g_star.len(),
        model.psi.nrows()
    );
    KernelClassifier::new(model.psi.tr_mul(g_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numopt::check_gradient;
    use approx::assert_relative_eq;

    fn toy() -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>, DMatrix<f64>) {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0]);
        let x = DMatrix::from_fn(6, 2, |i, j| ((i * 2 + j) as f64 * 1.3).sin());
        let kx = DMatrix::from_fn(6, 6, |i, j| (-(x.row(i) - x.row(j)).norm_squared()).exp());
        let b = DMatrix::from_fn(7, 3, |i, j| ((i + 3 * j) as f64 * 0.7).cos());
        (g, with_bias_row(&kx), vec![0, 0, 1, 1, 2, 2], b)
    }

    #[test]
    fn gradient_matches_differences() {
        let (g, k, labels, b) = toy();
        let cfg = KernelDtConfig {
            lambda1: 0.8,
            lambda2: 0.6,
            ..KernelDtConfig::default()
        };
        let obj = KernelDtObjective::new(&g, &k, &labels, &b, &cfg).unwrap();
        assert_eq!(obj.r, 2.0);
        for s in 0..5 {
            let p = DVector::from_fn(obj.dimension(), |i, _| ((i + 11 * s) as f64 * 0.53).sin());
            assert!(check_gradient(&obj, &p, 1e-6).unwrap() < 1e-5);
        }
    }

    #[test]
    fn zero_weights_zero_psi() {
        let (g, k, labels, b) = toy();
        let cfg = KernelDtConfig {
            lambda1: 0.0,
            ..KernelDtConfig::default()
        };
        let m = train_kernel_dt(&g, &k, &labels, &b, &cfg).unwrap();
        assert_eq!(m.psi.amax(), 0.0);
    }

    #[test]
    fn classifier_penalty_pulls_to_solution() {
        let (g, k, labels, b) = toy();
        let cfg = KernelDtConfig {
            lambda1: 0.0,
            lambda2: 1e6,
            optimizer: OptimizerConfig {
                gradient_tolerance: 1e-9,
                max_iterations: 20000,
                ..OptimizerConfig::default()
            },
            ..KernelDtConfig::default()
        };
        let m = train_kernel_dt(&g, &k, &labels, &b, &cfg).unwrap();
        let oracle = g.clone().lu().solve(&b.transpose()).unwrap();
        assert!((&m.psi - &oracle).amax() < 1e-4, "{}", (&m.psi - &oracle).amax());
        let beta = dt_kernel_classifier(&m, &g.column(1).into_owned()).unwrap();
        let direct = m.psi.tr_mul(&g.column(1).into_owned());
        assert_relative_eq!(beta.beta, direct);
    }

    #[test]
    fn classifier_is_linear_in_text_column() {
        let (g, k, labels, b) = toy();
        let m = train_kernel_dt(&g, &k, &labels, &b, &KernelDtConfig::default()).unwrap();
        assert!(m.log.final_loss <= m.log.initial_loss);
        let g1 = DVector::from_vec(vec![0.2, -1.0, 0.5]);
        let g2 = DVector::from_vec(vec![1.5, 0.3, 0.0]);
        let lhs = dt_kernel_classifier(&m, &(&g1 * 2.0 + &g2 * -0.5)).unwrap().beta;
        let rhs = dt_kernel_classifier(&m, &g1).unwrap().beta * 2.0 + dt_kernel_classifier(&m, &g2).unwrap().beta * -0.5;
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        assert_eq!(dt_kernel_classifier(&m, &DVector::zeros(3)).unwrap().beta.amax(), 0.0);
    }

    #[test]
    fn save_load_roundtrip() {
        let (g, k, labels, b) = toy();
        let m = train_kernel_dt(&g, &k, &labels, &b, &KernelDtConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        m.save(&p("psi.cfmx"), &p("g.cfmx"), &p("kdt.json")).unwrap();
        assert_eq!(KernelTransfer::load(&p("psi.cfmx"), &p("g.cfmx"), &p("kdt.json")).unwrap(), m);
    }
}
