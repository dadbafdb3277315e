//! Linear domain transfer: a bilinear map `W` scoring text against images,
//! trained so that same-class pairs score high and cross-class pairs low.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::io;
use crate::linalg::SymmetricRoots;
use crate::numopt::{flatten_row_major, minimize, unflatten_row_major, Minimum, Objective, OptimizerConfig};
use crate::pairs::{hinge_loss, PairSet, Thresholds};

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub same_pairs: usize,
    pub cross_pairs: usize,
}

impl TrainingLog {
    pub(crate) fn from_minimum(initial_loss: f64, m: &Minimum<f64>, pairs: &PairSet) -> Self {
        if !m.converged {
            log::warn!(
                "transfer training stopped after {} iterations with gradient norm {:e}",
                m.iterations,
                m.gradient_norm
            );
        }
        Self {
            initial_loss,
            final_loss: m.value,
            iterations: m.iterations,
            evaluations: m.evaluations,
            gradient_norm: m.gradient_norm,
            converged: m.converged,
            trace: m.trace.clone(),
            same_pairs: pairs.same_count,
            cross_pairs: pairs.cross_count,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DtConfig {
    pub lambda: f64,
    pub thresholds: Thresholds,
    /// Seed for cross-class pair subsampling on large problems.
    pub seed: u64,
    pub optimizer: OptimizerConfig<f64>,
}

impl Default for DtConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMeta {
    pub rows: usize,
    pub cols: usize,
    pub thresholds: Thresholds,
    pub lambda1: f64,
    pub lambda2: f64,
    pub log: TrainingLog,
}

/// Learned `W` of shape `(d_t + 1) × (d_v + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransfer {
    pub w: DMatrix<f64>,
    pub thresholds: Thresholds,
    pub lambda1: f64,
    pub lambda2: f64,
    pub log: TrainingLog,
}

impl LinearTransfer {
    /// Scores `t_iᵀ W x_j` for every row of `t` and `x`.
    pub fn scores(&self, t: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        t * &self.w * x.transpose()
    }

    pub fn save(&self, matrix_path: &Path, meta_path: &Path) -> Result<()> {
        io::write_matrix(matrix_path, &self.w)?;
        io::write_json(
            meta_path,
            &TransferMeta {
                rows: self.w.nrows(),
                cols: self.w.ncols(),
                thresholds: self.thresholds,
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                log: self.log.clone(),
            },
        )
    }

    pub fn load(matrix_path: &Path, meta_path: &Path) -> Result<Self> {
        let w = io::read_matrix(matrix_path)?;
        let meta: TransferMeta = io::read_json(meta_path)?;
        if w.shape() != (meta.rows, meta.cols) {
            return Err(Error::load(matrix_path, "matrix shape disagrees with its metadata"));
        }
        Ok(Self {
            w,
            thresholds: meta.thresholds,
            lambda1: meta.lambda1,
            lambda2: meta.lambda2,
            log: meta.log,
        })
    }
}

fn check_inputs(t: &DMatrix<f64>, x: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
    ensure_arg!(t.nrows() >= 2, "need at least two training classes");
    ensure_arg!(x.nrows() == labels.len(), "{} images but {} labels", x.nrows(), labels.len());
    for (name, m) in [("text", t), ("visual", x)] {
        ensure_arg!(
            m.ncols() >= 1 && m.column(m.ncols() - 1).iter().all(|&v| v == 1.0),
            "{name} rows must end with the bias entry 1"
        );
        ensure_arg!(m.iter().all(|v| v.is_finite()), "{name} matrix has non-finite entries");
    }
    Ok(())
}

/// `|L|² + λ Σ h(A L B)` over `L` (classes × images), where `A` and `B` are
/// the square roots of the text and visual Gram matrices.
pub struct DtObjective {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub pairs: PairSet,
    pub lambda: f64,
    pub thresholds: Thresholds,
}

impl DtObjective {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.b.nrows()
    }
}

impl Objective<f64> for DtObjective {
    fn dimension(&self) -> usize {
        self.rows() * self.cols()
    }

    fn value_and_gradient(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let l = unflatten_row_major(v, self.rows(), self.cols());
        let s = &self.a * &l * &self.b;
        let (h, dh) = hinge_loss(&s, &self.pairs, self.thresholds, 1.0);
        let value = l.norm_squared() + self.lambda * h;
        let grad = &l * 2.0 + (&self.a * dh * &self.b) * self.lambda;
        (value, flatten_row_major(&grad))
    }
}

/// The training objective for `t`, `x` and `labels` together with the
/// inverse square roots needed to rebuild `W`.
pub fn dt_objective(
    t: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
    config: &DtConfig,
) -> Result<(DtObjective, DMatrix<f64>, DMatrix<f64>)> {
    check_inputs(t, x, labels)?;
    config.thresholds.validate()?;
    ensure_arg!(config.lambda >= 0.0, "lambda must be non-negative");
    let kt = t * t.transpose();
    let kx = x * x.transpose();
    let rt = SymmetricRoots::with_relative_floor(&kt)?;
    let rx = SymmetricRoots::with_relative_floor(&kx)?;
    let pairs = PairSet::build(t.nrows(), labels, config.seed)?;
    let objective = DtObjective {
        a: rt.range_sqrt(),
        b: rx.range_sqrt(),
        pairs,
        lambda: config.lambda,
        thresholds: config.thresholds,
    };
    Ok((objective, rt.inverse_sqrt(), rx.inverse_sqrt()))
}

/// Trains `W` from augmented text rows `t` (one per class), augmented
/// image rows `x`, and the class row index of each image.
pub fn train_dt(t: &DMatrix<f64>, x: &DMatrix<f64>, labels: &[usize], config: &DtConfig) -> Result<LinearTransfer> {
    config.optimizer.validate()?;
    let (objective, kt_inv, kx_inv) = dt_objective(t, x, labels, config)?;
    let start = DVector::zeros(objective.dimension());
    let initial = objective.value(&start);
    let min = minimize(&objective, start, &config.optimizer)?;
    let l = unflatten_row_major(&min.point, objective.rows(), objective.cols());
    let w = t.transpose() * kt_inv * l * kx_inv * x;
    Ok(LinearTransfer {
        w,
        thresholds: config.thresholds,
        lambda1: config.lambda,
        lambda2: 0.0,
        log: TrainingLog::from_minimum(initial, &min, &objective.pairs),
    })
}

/// `|W|² + λ1 Σ h(T W Xᵀ) + λ2 Σ_j |c_j - t_jᵀ W|²` over `W`.
pub struct ConstrainedDtObjective {
    pub t: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub seen: DMatrix<f64>,
    pub pairs: PairSet,
    pub lambda1: f64,
    pub lambda2: f64,
    pub thresholds: Thresholds,
}

impl Objective<f64> for ConstrainedDtObjective {
    fn dimension(&self) -> usize {
        self.t.ncols() * self.x.ncols()
    }

    fn value_and_gradient(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let w = unflatten_row_major(v, self.t.ncols(), self.x.ncols());
        let tw = &self.t * &w;
        let s = &tw * self.x.transpose();
        let (h, dh) = hinge_loss(&s, &self.pairs, self.thresholds, 1.0);
        let resid = &tw - &self.seen;
        let value = w.norm_squared() + self.lambda1 * h + self.lambda2 * resid.norm_squared();
        let grad = &w * 2.0
            + self.t.transpose() * (dh * &self.x * self.lambda1 + resid * (2.0 * self.lambda2));
        (value, flatten_row_major(&grad))
    }
}

/// Domain transfer that also pulls `t_jᵀ W` towards each seen classifier
/// `c_j` (rows of `seen`). With `lambda2 == 0` this is [`train_dt`] with
/// `lambda = lambda1`.
pub fn train_constrained_dt(
    t: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
    seen: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
    config: &DtConfig,
) -> Result<LinearTransfer> {
    ensure_arg!(lambda1 >= 0.0 && lambda2 >= 0.0, "weights must be non-negative");
    if lambda2 == 0.0 {
        return train_dt(t, x, labels, &DtConfig { lambda: lambda1, ..config.clone() });
    }
    check_inputs(t, x, labels)?;
    config.thresholds.validate()?;
    config.optimizer.validate()?;
    ensure_arg!(
        seen.shape() == (t.nrows(), x.ncols()),
        "expected one seen classifier of length {} per class, got {}x{}",
        x.ncols(),
        seen.nrows(),
        seen.ncols()
    );
    let objective = ConstrainedDtObjective {
        t: t.clone(),
        x: x.clone(),
        seen: seen.clone(),
        pairs: PairSet::build(t.nrows(), labels, config.seed)?,
        lambda1,
        lambda2,
        thresholds: config.thresholds,
    };
    let start = DVector::zeros(objective.dimension());
    let initial = objective.value(&start);
    let min = minimize(&objective, start, &config.optimizer)?;
    Ok(LinearTransfer {
        w: unflatten_row_major(&min.point, t.ncols(), x.ncols()),
        thresholds: config.thresholds,
        lambda1,
        lambda2,
        log: TrainingLog::from_minimum(initial, &min, &objective.pairs),
    })
}

/// `t_*ᵀ W`, a hyperplane over augmented visual vectors.
pub fn dt_classifier(model: &LinearTransfer, t_star: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_arg!(
        t_star.len() == model.w.nrows(),
        "text vector has {} entries, the transfer expects {}",
        t_star.len(),
        model.w.nrows()
    );
    Ok(model.w.tr_mul(t_star))
}
