//! Classifier prediction for an unseen class: the quadratic programs that
//! combine regression, domain transfer and seen-class negatives, and the
//! one-class SVM adjustment of kernel predictions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::{KernelClassifier, LinearClassifier};
use crate::error::{ensure_arg, Error, Result};
use crate::linalg;
use crate::qp::{solve_qp_with, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::regression::RegressorPrediction;

/// Gap used to turn the strict kernel correlation floor into a closed constraint.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Weight of the correlation with the transferred classifier.
    pub alpha: f64,
    /// Weight of the regressor term.
    pub gamma: f64,
    /// Slack penalty for seen images on the positive side.
    pub c: f64,
    /// Correlation floor for the linear programs; `None` uses the transfer's `l`.
    pub l: Option<f64>,
    /// Weight of the correlation with the kernel transfer prediction.
    pub zeta: f64,
    /// Box bound on kernel coefficients.
    pub c_box: f64,
    /// Correlation floor for the kernel program; `None` disables it.
    pub kernel_l: Option<f64>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            gamma: 1.0,
            c: 1.0,
            l: None,
            zeta: 1.0,
            c_box: 1.0,
            kernel_l: None,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma), ("C", self.c), ("zeta", self.zeta), ("C_box", self.c_box)] {
            ensure_arg!(v >= 0.0 && v.is_finite(), "{name} must be a non-negative number, got {v}");
        }
        Ok(())
    }
}

/// A predicted linear classifier with the solver report.
#[derive(Debug, Clone)]
pub struct LinearPrediction {
    pub classifier: LinearClassifier,
    pub qp: QpSolution<f64>,
}

#[derive(Debug, Clone)]
pub struct KernelPrediction {
    pub classifier: KernelClassifier,
    pub qp: QpSolution<f64>,
}

fn settings() -> QpSettings<f64> {
    QpSettings::default()
}

fn check_status(sol: &QpSolution<f64>, floor: Option<f64>) -> Result<()> {
    match sol.status {
        QpStatus::Optimal => Ok(()),
        QpStatus::MaxIter => {
            log::warn!(
                "QP stopped at the iteration limit (primal {:e}, dual {:e})",
                sol.primal_residual,
                sol.dual_residual
            );
            Ok(())
        }
        QpStatus::Infeasible => Err(Error::Predictor(match floor {
            Some(l) => format!("the correlation floor l = {l} cannot be met; try a lower l"),
            None => "the prediction problem is infeasible".into(),
        })),
        QpStatus::Unbounded => Err(Error::Predictor("the prediction problem is unbounded".into())),
    }
}

/// Shared linear program: `min cᵀc + linᵀc + C Σζ` with seen images on the
/// negative side up to slack, and optionally `wᵀc ≥ l`.
fn linear_qp(linear: DVector<f64>, seen: &DMatrix<f64>, c_slack: f64, floor: Option<(&DVector<f64>, f64)>) -> Result<LinearPrediction> {
    let d = linear.len();
    ensure_arg!(seen.nrows() == 0 || seen.ncols() == d, "seen images have {} columns, expected {d}", seen.ncols());
    // Without a slack price the seen-image constraints can always be met by
    // slack alone, so they are dropped.
    let n = if c_slack > 0.0 { seen.nrows() } else { 0 };
    let dim = d + n;
    let mut q = DMatrix::zeros(dim, dim);
    for i in 0..d {
        q[(i, i)] = 2.0;
    }
    let mut lin = DVector::from_element(dim, c_slack);
    lin.rows_mut(0, d).copy_from(&linear);

    let extra = usize::from(floor.is_some());
    let mut a = DMatrix::zeros(n + extra, dim);
    let mut b = DVector::zeros(n + extra);
    for i in 0..n {
        a.view_mut((i, 0), (1, d)).copy_from(&seen.row(i));
        a[(i, d + i)] = -1.0;
    }
    if let Some((w, l)) = floor {
        ensure_arg!(w.len() == d, "transferred classifier has wrong length");
        a.view_mut((n, 0), (1, d)).copy_from(&(-w).transpose());
        b[n] = -l;
    }
    let mut lower = DVector::from_element(dim, f64::NEG_INFINITY);
    lower.rows_mut(d, n).fill(0.0);
    let upper = DVector::from_element(dim, f64::INFINITY);
    let problem = QpProblem::new(q, lin).with_inequalities(a, b).with_bounds(lower, upper);
    let sol = solve_qp_with(&problem, &settings())?;
    check_status(&sol, floor.map(|f| f.1))?;
    Ok(LinearPrediction {
        classifier: LinearClassifier::new(sol.x.rows(0, d).into_owned())?,
        qp: sol,
    })
}

/// Combined prediction: `min cᵀc - α wᵀc - 2γ c̃ᵀc + C Σζ_i` subject to
/// `x_iᵀc ≤ ζ_i`, `ζ_i ≥ 0` for every seen image and `wᵀc ≥ l`, where
/// `w = Wᵀ t_*`. Pass `l = -∞` to drop the floor.
pub fn predict_linear_e(
    t_star: &DVector<f64>,
    regression: &RegressorPrediction,
    w: &DMatrix<f64>,
    seen: &DMatrix<f64>,
    l: f64,
    config: &PredictorConfig,
) -> Result<LinearPrediction> {
    config.validate()?;
    ensure_arg!(!l.is_nan(), "correlation floor is NaN");
    ensure_arg!(t_star.len() == w.nrows(), "text vector does not match the transfer");
    ensure_arg!(regression.mean.len() == w.ncols(), "regressor output does not match the transfer");
    let wt = w.tr_mul(t_star);
    let linear = &wt * -config.alpha - &regression.mean * (2.0 * config.gamma);
    let floor = l.is_finite().then_some((&wt, l));
    linear_qp(linear, seen, config.c, floor)
}

/// Regression constrained by the seen images: `min cᵀc - α c̃ᵀc + C Σζ_i`.
pub fn predict_linear_b(
    regression: &RegressorPrediction,
    seen: &DMatrix<f64>,
    alpha: f64,
    c: f64,
) -> Result<LinearPrediction> {
    ensure_arg!(alpha >= 0.0 && c >= 0.0, "alpha and C must be non-negative");
    linear_qp(&regression.mean * -alpha, seen, c, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneClassSign {
    Positive,
    Negative,
}

fn check_gram(gram: &DMatrix<f64>, a: &DVector<f64>) -> Result<()> {
    let n = gram.nrows();
    ensure_arg!(n >= 1 && gram.ncols() == n, "gram must be square and non-empty");
    ensure_arg!(a.len() == n, "diagonal vector has {} entries, expected {n}", a.len());
    linalg::ensure_symmetric(gram, 1e-8, "gram")?;
    Ok(())
}

/// Positive: `min βᵀK'β - βᵀa`, `Σβ = 1`, `0 ≤ β ≤ C`.
/// Negative: `min βᵀK'β + βᵀa`, `Σβ = -1`, `-C ≤ β ≤ 0`.
pub fn one_class_svm(gram: &DMatrix<f64>, a: &DVector<f64>, c: f64, sign: OneClassSign) -> Result<DVector<f64>> {
    check_gram(gram, a)?;
    let n = gram.nrows();
    ensure_arg!(
        c * n as f64 >= 1.0,
        "box bound C = {c} is too small for {n} coefficients to sum to one"
    );
    let s = match sign {
        OneClassSign::Positive => 1.0,
        OneClassSign::Negative => -1.0,
    };
    let (lower, upper) = match sign {
        OneClassSign::Positive => (0.0, c),
        OneClassSign::Negative => (-c, 0.0),
    };
    let problem = QpProblem::new(gram * 2.0, a * -s)
        .with_equalities(DMatrix::from_element(1, n, 1.0), DVector::from_element(1, s))
        .with_bounds(DVector::from_element(n, lower), DVector::from_element(n, upper));
    let sol = solve_qp_with(&problem, &settings())?;
    check_status(&sol, None)?;
    Ok(sol.x)
}

/// Refines a kernel transfer prediction against the seen images:
/// `min βᵀK'β - ζ β̂ᵀK'β + βᵀa` with `Σβ = -1`, `β̂ᵀK'β ≥ l`, `-C ≤ β ≤ 0`,
/// where `β̂` is the expansion part of `dt`. The bias of `dt` is kept.
pub fn predict_kernel_svm_dt(
    dt: &KernelClassifier,
    gram: &DMatrix<f64>,
    a: &DVector<f64>,
    config: &PredictorConfig,
) -> Result<KernelPrediction> {
    config.validate()?;
    check_gram(gram, a)?;
    let n = gram.nrows();
    ensure_arg!(dt.n_anchors() == n, "prediction has {} anchors, gram has {n}", dt.n_anchors());
    ensure_arg!(
        config.c_box * n as f64 >= 1.0,
        "box bound C = {} is too small for {n} coefficients to sum to -1",
        config.c_box
    );
    let v = gram * dt.coefficients();
    let mut problem = QpProblem::new(gram * 2.0, a - &v * config.zeta)
        .with_equalities(DMatrix::from_element(1, n, 1.0), DVector::from_element(1, -1.0))
        .with_bounds(DVector::from_element(n, -config.c_box), DVector::zeros(n));
    let floor = config.kernel_l.filter(|l| l.is_finite());
    if let Some(l) = floor {
        problem = problem.with_inequalities(DMatrix::from_row_slice(1, n, (-&v).as_slice()), DVector::from_element(1, -(l + STRICT_MARGIN)));
    }
    let sol = solve_qp_with(&problem, &settings())?;
    check_status(&sol, floor)?;
    let beta = sol.x.clone().insert_row(n, dt.bias());
    Ok(KernelPrediction {
        classifier: KernelClassifier::new(beta)?,
        qp: sol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reg(v: &[f64]) -> RegressorPrediction {
        RegressorPrediction {
            mean: DVector::from_column_slice(v),
        }
    }

    #[test]
    fn b_without_data_is_zero() {
        let p = predict_linear_b(&reg(&[1.0, -2.0]), &DMatrix::zeros(0, 2), 0.0, 1.0).unwrap();
        assert!(p.classifier.c.amax() < 1e-9);
    }

    #[test]
    fn b_with_zero_slack_price_is_scaled_mean() {
        let seen = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = predict_linear_b(&reg(&[1.0, 2.0]), &seen, 4.0, 0.0).unwrap();
        assert_relative_eq!(p.classifier.c, DVector::from_vec(vec![2.0, 4.0]), epsilon = 1e-6);
    }

    #[test]
    fn b_flips_sign_for_seen_point() {
        // c̃ = (1, 0) scores the seen image at 1, so the constrained optimum
        // must push c to score the seen image at or below 0.
        let seen = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = predict_linear_b(&reg(&[1.0, 0.0]), &seen, 2.0, 1e4).unwrap();
        let s = p.classifier.score(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(s <= 1e-6, "{s}");
    }

    #[test]
    fn e_regression_only_follows_mean() {
        let w = DMatrix::zeros(2, 3);
        let cfg = PredictorConfig {
            alpha: 0.0,
            gamma: 3.0,
            ..PredictorConfig::default()
        };
        let p = predict_linear_e(&DVector::from_vec(vec![1.0, 1.0]), &reg(&[0.5, -1.0, 2.0]), &w, &DMatrix::zeros(0, 3), f64::NEG_INFINITY, &cfg).unwrap();
        let c = &p.classifier.c;
        let cos = c.dot(&reg(&[0.5, -1.0, 2.0]).mean) / (c.norm() * reg(&[0.5, -1.0, 2.0]).mean.norm());
        assert!((cos - 1.0).abs() < 1e-6);
    }

    #[test]
    fn e_floor_becomes_active() {
        let w = DMatrix::identity(2, 2);
        let cfg = PredictorConfig {
            alpha: 1.0,
            gamma: 0.0,
            ..PredictorConfig::default()
        };
        // Unconstrained optimum is c = w/2 with wᵀc = 0.5 < 3.
        let t = DVector::from_vec(vec![1.0, 0.0]);
        let p = predict_linear_e(&t, &reg(&[0.0, 0.0]), &w, &DMatrix::zeros(0, 2), 3.0, &cfg).unwrap();
        assert!((p.classifier.c.dot(&t) - 3.0).abs() < 1e-5);
    }

    #[test]
    fn e_degenerate_weights_give_zero() {
        let cfg = PredictorConfig {
            alpha: 0.0,
            gamma: 0.0,
            c: 0.0,
            ..PredictorConfig::default()
        };
        let seen = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.5]);
        let p = predict_linear_e(&DVector::from_vec(vec![1.0, 1.0]), &reg(&[2.0, 1.0]), &DMatrix::identity(2, 2), &seen, f64::NEG_INFINITY, &cfg).unwrap();
        assert!(p.classifier.c.amax() < 1e-9);
    }

    #[test]
    fn e_infeasible_floor_reported() {
        let w = DMatrix::zeros(2, 2);
        let err = predict_linear_e(&DVector::from_vec(vec![1.0, 1.0]), &reg(&[0.0, 0.0]), &w, &DMatrix::zeros(0, 2), 1.0, &PredictorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Predictor(ref m) if m.contains("lower l")), "{err}");
    }

    #[test]
    fn one_class_single_point() {
        let b = one_class_svm(&DMatrix::from_element(1, 1, 1.0), &DVector::from_element(1, 1.0), 1.0, OneClassSign::Positive).unwrap();
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-9);
        assert!(one_class_svm(&DMatrix::identity(3, 3), &DVector::from_element(3, 1.0), 0.2, OneClassSign::Positive).is_err());
    }

    #[test]
    fn one_class_signs_mirror() {
        let x: DMatrix<f64> = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.2, 0.3, 1.1, -0.8, 0.4]);
        let g = DMatrix::from_fn(4, 4, |i, j| -> f64 { (-(x.row(i) - x.row(j)).norm_squared()).exp() });
        let a = g.diagonal();
        let pos = one_class_svm(&g, &a, 0.6, OneClassSign::Positive).unwrap();
        let neg = one_class_svm(&g, &a, 0.6, OneClassSign::Negative).unwrap();
        assert!((pos + neg).amax() <= 1e-9);
    }

    #[test]
    fn svm_dt_without_correlation_is_negative_one_class() {
        let x: DMatrix<f64> = DMatrix::from_row_slice(4, 1, &[0.0, 0.5, 1.5, 3.0]);
        let g = DMatrix::from_fn(4, 4, |i, j| (-(x[i] - x[j]).abs()).exp());
        let a = g.diagonal();
        let dt = KernelClassifier::new(DVector::from_vec(vec![0.3, -0.1, 0.2, 0.4, 0.7])).unwrap();
        let cfg = PredictorConfig {
            zeta: 0.0,
            c_box: 0.5,
            ..PredictorConfig::default()
        };
        let p = predict_kernel_svm_dt(&dt, &g, &a, &cfg).unwrap();
        let neg = one_class_svm(&g, &a, 0.5, OneClassSign::Negative).unwrap();
        assert!((p.classifier.coefficients() - neg).amax() < 1e-6);
        assert_eq!(p.classifier.bias(), 0.7);
        assert!((p.classifier.coefficients().sum() + 1.0).abs() < 1e-6);
    }
}
