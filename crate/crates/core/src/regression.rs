//! Regressors from text features to linear classifiers: a per-dimension
//! Gaussian process baseline and twin Gaussian process prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::kernels::median_pairwise_distance;
use crate::numopt::{minimize, Objective, OptimizerConfig};

/// `exp(-|a - b|^2 / (2 rho^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    pub rho: f64,
}

impl GaussianKernel {
    pub fn new(rho: f64) -> Result<Self> {
        ensure_arg!(rho > 0.0 && rho.is_finite(), "kernel width must be positive, got {rho}");
        Ok(Self { rho })
    }

    /// Width equal to the median pairwise distance between rows.
    pub fn median(rows: &DMatrix<f64>) -> Self {
        Self {
            rho: median_pairwise_distance(rows),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (2.0 * self.rho * self.rho)).exp()
    }

    pub fn gram(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let n = rows.nrows();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(rows.row(i).transpose().as_slice(), rows.row(j).transpose().as_slice());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub fn column(&self, rows: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(rows.nrows(), |i, _| {
            self.eval(rows.row(i).transpose().as_slice(), x.as_slice())
        })
    }
}

/// Predicted classifier mean; the covariance is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorPrediction {
    pub mean: DVector<f64>,
}

impl RegressorPrediction {
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::identity(self.mean.len(), self.mean.len())
    }

    /// `-(c - mean)ᵀ(c - mean)`, the log density up to its constant.
    pub fn log_preg(&self, c: &DVector<f64>) -> Result<f64> {
        ensure_arg!(c.len() == self.mean.len(), "classifier has {} entries, expected {}", c.len(), self.mean.len());
        Ok(-(c - &self.mean).norm_squared())
    }

    /// `2 cᵀ mean`, the part of the log density that depends on `c` beyond `cᵀc`.
    pub fn linear_term(&self, c: &DVector<f64>) -> Result<f64> {
        ensure_arg!(c.len() == self.mean.len(), "classifier has {} entries, expected {}", c.len(), self.mean.len());
        Ok(2.0 * c.dot(&self.mean))
    }
}

fn check_pairs(inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<()> {
    ensure_arg!(inputs.nrows() >= 2, "regression needs at least two training classes, got {}", inputs.nrows());
    ensure_arg!(
        inputs.nrows() == outputs.nrows(),
        "{} text rows but {} classifier rows",
        inputs.nrows(),
        outputs.nrows()
    );
    ensure_arg!(
        inputs.iter().chain(outputs.iter()).all(|v| v.is_finite()),
        "non-finite training data"
    );
    Ok(())
}

/// Independent Gaussian process per output dimension with a shared input kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GprModel {
    pub inputs: DMatrix<f64>,
    pub kernel: GaussianKernel,
    pub noise: f64,
    /// `(K + noise I)^{-1} Y`.
    pub weights: DMatrix<f64>,
}

impl GprModel {
    pub fn fit(inputs: &DMatrix<f64>, outputs: &DMatrix<f64>, kernel: Option<GaussianKernel>, noise: f64) -> Result<Self> {
        check_pairs(inputs, outputs)?;
        ensure_arg!(noise >= 0.0, "noise variance must be non-negative");
        let kernel = kernel.unwrap_or_else(|| GaussianKernel::median(inputs));
        let mut k = kernel.gram(inputs);
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Regression("input kernel matrix is singular".into()))?;
        let weights = chol.solve(outputs);
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Regression("input kernel matrix is singular".into()));
        }
        Ok(Self {
            inputs: inputs.clone(),
            kernel,
            noise,
            weights,
        })
    }

    pub fn predict(&self, t_star: &DVector<f64>) -> Result<RegressorPrediction> {
        ensure_arg!(t_star.len() == self.inputs.ncols(), "text vector has wrong dimension");
        let k = self.kernel.column(&self.inputs, t_star);
        Ok(RegressorPrediction {
            mean: self.weights.tr_mul(&k),
        })
    }
}

pub fn gpr_predict(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    t_star: &DVector<f64>,
    noise: f64,
) -> Result<RegressorPrediction> {
    GprModel::fit(inputs, outputs, None, noise)?.predict(t_star)
}

#[derive(Debug, Clone)]
pub struct TgpConfig {
    pub input_kernel: Option<GaussianKernel>,
    pub output_kernel: Option<GaussianKernel>,
    pub lambda_t: f64,
    pub lambda_c: f64,
    pub optimizer: OptimizerConfig<f64>,
}

impl Default for TgpConfig {
    fn default() -> Self {
        Self {
            input_kernel: None,
            output_kernel: None,
            lambda_t: 1e-3,
            lambda_c: 1e-3,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Smallest usable input-side variance; smaller values are raised to it.
pub const ETA_FLOOR: f64 = 1e-12;

/// Twin Gaussian process over (text vector, classifier) pairs.
#[derive(Debug, Clone)]
pub struct TgpModel {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    input_kernel: GaussianKernel,
    output_kernel: GaussianKernel,
    lambda_t: f64,
    lambda_c: f64,
    input_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `(K_C + lambda_c I)^{-1}`.
    output_inverse: DMatrix<f64>,
    optimizer: OptimizerConfig<f64>,
}

/// Prediction with the diagnostics of the inner minimization.
#[derive(Debug, Clone)]
pub struct TgpPrediction {
    pub prediction: RegressorPrediction,
    pub eta: f64,
    pub eta_clamped: bool,
    pub initial_value: f64,
    pub final_value: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl TgpModel {
    pub fn fit(inputs: &DMatrix<f64>, outputs: &DMatrix<f64>, config: &TgpConfig) -> Result<Self> {
        check_pairs(inputs, outputs)?;
        ensure_arg!(config.lambda_t > 0.0 && config.lambda_c > 0.0, "TGP regularizers must be positive");
        config.optimizer.validate()?;
        let input_kernel = config.input_kernel.unwrap_or_else(|| GaussianKernel::median(inputs));
        let output_kernel = config.output_kernel.unwrap_or_else(|| GaussianKernel::median(outputs));
        let regularized = |k: DMatrix<f64>, lambda: f64| {
            let mut k = k;
            for i in 0..k.nrows() {
                k[(i, i)] += lambda;
            }
            k
        };
        let input_chol = regularized(input_kernel.gram(inputs), config.lambda_t)
            .cholesky()
            .ok_or_else(|| Error::Regression("regularized input kernel is not positive definite".into()))?;
        let output_inverse = regularized(output_kernel.gram(outputs), config.lambda_c)
            .cholesky()
            .ok_or_else(|| Error::Regression("regularized output kernel is not positive definite".into()))?
            .inverse();
        Ok(Self {
            inputs: inputs.clone(),
            outputs: outputs.clone(),
            input_kernel,
            output_kernel,
            lambda_t: config.lambda_t,
            lambda_c: config.lambda_c,
            input_chol,
            output_inverse,
            optimizer: config.optimizer.clone(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn lambdas(&self) -> (f64, f64) {
        (self.lambda_t, self.lambda_c)
    }

    pub fn kernels(&self) -> (GaussianKernel, GaussianKernel) {
        (self.input_kernel, self.output_kernel)
    }

    /// The objective minimized for `t_star`, with its `u` weights and `eta`.
    pub fn objective(&self, t_star: &DVector<f64>) -> Result<TgpObjective<'_>> {
        ensure_arg!(t_star.len() == self.inputs.ncols(), "text vector has wrong dimension");
        let kt = self.input_kernel.column(&self.inputs, t_star);
        let u = self.input_chol.solve(&kt);
        let raw_eta = 1.0 - kt.dot(&u);
        if !raw_eta.is_finite() || raw_eta < -1e-8 {
            return Err(Error::Regression(format!(
                "input-side variance is negative ({raw_eta:e}); the input kernel is degenerate"
            )));
        }
        let eta_clamped = raw_eta < ETA_FLOOR;
        let eta = raw_eta.max(ETA_FLOOR);
        if eta_clamped {
            log::debug!("TGP eta {raw_eta:e} raised to {ETA_FLOOR:e}");
        }
        Ok(TgpObjective {
            model: self,
            u,
            eta,
            eta_clamped,
        })
    }

    pub fn predict(&self, t_star: &DVector<f64>) -> Result<TgpPrediction> {
        let objective = self.objective(t_star)?;
        let start = objective.initial_point();
        let initial_value = objective.value(&start);
        let min = minimize(&objective, start, &self.optimizer)?;
        if !min.converged {
            log::debug!("TGP minimization stopped after {} iterations", min.iterations);
        }
        Ok(TgpPrediction {
            prediction: RegressorPrediction { mean: min.point },
            eta: objective.eta,
            eta_clamped: objective.eta_clamped,
            initial_value,
            final_value: min.value,
            converged: min.converged,
            iterations: min.iterations,
        })
    }
}

pub fn tgp_predict(model: &TgpModel, t_star: &DVector<f64>) -> Result<RegressorPrediction> {
    Ok(model.predict(t_star)?.prediction)
}

/// `1 - 2 k_c(c)ᵀu - eta ln(1 - k_c(c)ᵀ (K_C + lambda_c I)^{-1} k_c(c))`.
pub struct TgpObjective<'a> {
    model: &'a TgpModel,
    pub u: DVector<f64>,
    pub eta: f64,
    pub eta_clamped: bool,
}

impl TgpObjective<'_> {
    /// `Σ_j u_j c_j`.
    pub fn initial_point(&self) -> DVector<f64> {
        self.model.outputs.tr_mul(&self.u)
    }
}

impl Objective<f64> for TgpObjective<'_> {
    fn dimension(&self) -> usize {
        self.model.outputs.ncols()
    }

    fn value_and_gradient(&self, c: &DVector<f64>) -> (f64, DVector<f64>) {
        let m = self.model;
        let kc = m.output_kernel.column(&m.outputs, c);
        let akc = &m.output_inverse * &kc;
        let s = 1.0 - kc.dot(&akc);
        if !(s > 0.0) {
            return (f64::INFINITY, DVector::zeros(c.len()));
        }
        let value = 1.0 - 2.0 * kc.dot(&self.u) - self.eta * s.ln();
        // d k_i / dc = -k_i (c - c_i) / rho^2
        let rho2 = m.output_kernel.rho * m.output_kernel.rho;
        let weights = DVector::from_fn(kc.len(), |i, _| {
            (-2.0 * self.u[i] + 2.0 * self.eta * akc[i] / s) * (-kc[i] / rho2)
        });
        let mut grad = c * weights.sum();
        grad -= m.outputs.tr_mul(&weights);
        (value, grad)
    }
}
