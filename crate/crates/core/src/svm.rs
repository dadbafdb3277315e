//! Kernel SVMs with a bias term, trained by sequential minimal optimization
//! with second-order working-set selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_arg, Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop when the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-6,
            max_iterations: 1_000_000,
        }
    }
}

/// Decision function `Σ β_i k(x_i, x) + b`, with `β_i = α_i y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub beta: DVector<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySvm {
    pub fn decision(&self, kx: &DVector<f64>) -> f64 {
        self.beta.dot(kx) + self.bias
    }

    /// `[β; b]`.
    pub fn stacked(&self) -> DVector<f64> {
        self.beta.clone().insert_row(self.beta.len(), self.bias)
    }
}

/// Solves `min ½αᵀQα - 1ᵀα` with `Q_ij = y_i y_j K_ij`, `0 ≤ α ≤ C`, `yᵀα = 0`.
pub fn train_binary_svm(gram: &DMatrix<f64>, y: &[f64], config: &SvmConfig) -> Result<BinarySvm> {
    let n = y.len();
    ensure_arg!(gram.shape() == (n, n), "gram is {}x{} but there are {n} labels", gram.nrows(), gram.ncols());
    ensure_arg!(y.iter().all(|&v| v == 1.0 || v == -1.0), "labels must be +1 or -1");
    ensure_arg!(
        y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0),
        "both classes must be present"
    );
    ensure_arg!(config.c > 0.0 && config.c.is_finite(), "C must be positive, got {}", config.c);
    let c = config.c;
    let q = |i: usize, j: usize| y[i] * y[j] * gram[(i, j)];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        // i maximizes -y_t G_t over the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_drop = f64::INFINITY;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let a = (gram[(i, i)] + gram[(t, t)] - 2.0 * gram[(i, t)]).max(TAU);
                let drop = -diff * diff / a;
                if drop <= best_drop {
                    best_drop = drop;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < config.tolerance || j_sel.is_none() {
            converged = true;
            break;
        }
        let j = j_sel.unwrap();
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (gram[(i, i)] + gram[(j, j)] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (gram[(i, i)] + gram[(j, j)] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }
    if !converged {
        log::warn!("SVM stopped after {iterations} iterations without meeting the tolerance");
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { 0.5 * (ub + lb) };
    let beta = DVector::from_fn(n, |t, _| alpha[t] * y[t]);
    if !rho.is_finite() || beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization {
            message: "SVM produced non-finite coefficients".into(),
            point: beta.iter().copied().collect(),
        });
    }
    Ok(BinarySvm {
        beta,
        bias: -rho,
        iterations,
        converged,
    })
}

/// One-vs-all SVMs; column `j` of `b` is `[β_j; b_j]` for class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeenKernelClassifiers {
    pub b: DMatrix<f64>,
    pub converged: bool,
}

impl SeenKernelClassifiers {
    pub fn n_classes(&self) -> usize {
        self.b.ncols()
    }
}

/// `labels[i]` is the class index (`0..n_classes`) of image `i`.
pub fn train_seen_kernel_classifiers(
    gram: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    config: &SvmConfig,
) -> Result<SeenKernelClassifiers> {
    ensure_arg!(n_classes >= 2, "one-vs-all training needs at least two classes");
    ensure_arg!(config.c > 0.0, "C must be positive, got {}", config.c);
    let n = labels.len();
    let mut b = DMatrix::zeros(n + 1, n_classes);
    let mut converged = true;
    for k in 0..n_classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
        let svm = train_binary_svm(gram, &y, config)?;
        converged &= svm.converged;
        b.set_column(k, &svm.stacked());
    }
    Ok(SeenKernelClassifiers { b, converged })
}
