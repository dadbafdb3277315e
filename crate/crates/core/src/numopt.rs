//! BFGS quasi-Newton minimization with a strong-Wolfe line search.
//!
//! The line search brackets an acceptable step and then zooms in using the
//! minimizer of the cubic that interpolates values and slopes at the bracket
//! ends, falling back to bisection when the cubic is unusable.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A differentiable function of a flat parameter vector.
pub trait Objective<T: Real> {
    fn dimension(&self) -> usize;

    fn value(&self, x: &DVector<T>) -> T {
        self.value_and_gradient(x).0
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &DVector<T>) -> (T, DVector<T>);
}

/// Adapts a closure returning `(value, gradient)` into an [`Objective`].
pub struct FnObjective<F> {
    dimension: usize,
    f: F,
}

impl<F> FnObjective<F> {
    pub fn new(dimension: usize, f: F) -> Self {
        Self { dimension, f }
    }
}

impl<T, F> Objective<T> for FnObjective<F>
where
    T: Real,
    F: Fn(&DVector<T>) -> (T, DVector<T>),
{
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn value_and_gradient(&self, x: &DVector<T>) -> (T, DVector<T>) {
        (self.f)(x)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig<T> {
    pub max_iterations: usize,
    /// Convergence when the Euclidean norm of the gradient drops to this value.
    pub gradient_tolerance: T,
    /// Sufficient-decrease constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            gradient_tolerance: T::lit(1e-8),
            c1: T::lit(1e-4),
            c2: T::lit(0.9),
            max_line_search: 40,
        }
    }
}

impl<T: Real> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > T::zero()) {
            return Err(Error::Argument("gradient tolerance must be positive".into()));
        }
        if !(T::zero() < self.c1 && self.c1 < self.c2 && self.c2 < T::one()) {
            return Err(Error::Argument(
                "line search constants must satisfy 0 < c1 < c2 < 1".into(),
            ));
        }
        if self.max_line_search == 0 {
            return Err(Error::Argument("max_line_search must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub point: DVector<T>,
    pub value: T,
    pub gradient_norm: T,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<T>,
}

fn non_finite<T: Real>(what: &str, x: &DVector<T>) -> Error {
    Error::Optimization {
        message: format!("non-finite {what}"),
        point: x.iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

fn all_finite<T: Real>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.is_finite_val())
}

struct Probe<T: Real> {
    step: T,
    value: T,
    slope: T,
    gradient: DVector<T>,
}

struct LineSearch<'a, T: Real, O: Objective<T> + ?Sized> {
    f: &'a O,
    x: &'a DVector<T>,
    direction: &'a DVector<T>,
    value0: T,
    slope0: T,
    c1: T,
    c2: T,
    budget: usize,
    evaluations: usize,
}

impl<T: Real, O: Objective<T> + ?Sized> LineSearch<'_, T, O> {
    fn probe(&mut self, step: T) -> Option<Probe<T>> {
        self.evaluations += 1;
        let trial = self.x + self.direction * step;
        let (value, gradient) = self.f.value_and_gradient(&trial);
        if !value.is_finite_val() || !all_finite(&gradient) {
            return None;
        }
        let slope = gradient.dot(self.direction);
        Some(Probe {
            step,
            value,
            slope,
            gradient,
        })
    }

    fn armijo_ok(&self, p: &Probe<T>) -> bool {
        p.value <= self.value0 + self.c1 * p.step * self.slope0
    }

    fn curvature_ok(&self, p: &Probe<T>) -> bool {
        p.slope.abs() <= -self.c2 * self.slope0
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    /// Returns an accepted step; every returned step satisfies sufficient decrease.
    fn run(&mut self, initial_step: T) -> Option<Probe<T>> {
        let mut prev = Probe {
            step: T::zero(),
            value: self.value0,
            slope: self.slope0,
            gradient: DVector::zeros(0),
        };
        let mut step = initial_step;
        let mut first = true;
        loop {
            if self.exhausted() {
                return None;
            }
            let Some(cur) = self.probe(step) else {
                // Overflow along the ray: pull back towards the last good step.
                step = (prev.step + step) * T::lit(0.5);
                if step <= T::zero() {
                    return None;
                }
                continue;
            };
            if !self.armijo_ok(&cur) || (!first && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature_ok(&cur) {
                return Some(cur);
            }
            if cur.slope >= T::zero() {
                return self.zoom(cur, prev);
            }
            first = false;
            step = cur.step * T::lit(2.0);
            prev = cur;
        }
    }

    /// One secant step on the directional derivative from an accepted probe.
    /// On a quadratic this lands on the exact line minimizer, which keeps
    /// BFGS close to its finite termination. The refined probe replaces the
    /// accepted one only if it passes both Wolfe tests with a lower value.
    fn refine(&mut self, accepted: Probe<T>) -> Probe<T> {
        let curvature = accepted.slope - self.slope0;
        if !(curvature > T::zero()) || self.exhausted() {
            return accepted;
        }
        let step = accepted.step * -self.slope0 / curvature;
        let close = (step - accepted.step).abs() <= T::lit(1e-3) * accepted.step;
        if !step.is_finite_val() || step <= T::zero() || close {
            return accepted;
        }
        match self.probe(step) {
            Some(p) if self.armijo_ok(&p) && self.curvature_ok(&p) && p.value < accepted.value => p,
            _ => accepted,
        }
    }

    fn zoom(&mut self, mut lo: Probe<T>, mut hi: Probe<T>) -> Option<Probe<T>> {
        loop {
            if self.exhausted() {
                break;
            }
            let width = (hi.step - lo.step).abs();
            if width <= T::default_epsilon() * (T::one() + lo.step.abs()) {
                break;
            }
            let step = cubic_step(&lo, &hi);
            let Some(cur) = self.probe(step) else {
                hi = Probe {
                    step,
                    value: T::infinity(),
                    slope: T::zero(),
                    gradient: DVector::zeros(0),
                };
                continue;
            };
            if !self.armijo_ok(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature_ok(&cur) {
                    return Some(cur);
                }
                if cur.slope * (hi.step - lo.step) >= T::zero() {
                    hi = lo;
                }
                lo = cur;
            }
        }
        // Best sufficient-decrease point found, if any.
        if lo.step > T::zero() {
            Some(lo)
        } else {
            None
        }
    }
}

/// Minimizer of the cubic interpolating both probes, safeguarded to stay
/// inside the middle 80% of the bracket.
fn cubic_step<T: Real>(a: &Probe<T>, b: &Probe<T>) -> T {
    let (lo, hi) = if a.step < b.step {
        (a.step, b.step)
    } else {
        (b.step, a.step)
    };
    let mid = (lo + hi) * T::lit(0.5);
    if !b.value.is_finite_val() || !a.value.is_finite_val() {
        return mid;
    }
    let d1 = a.slope + b.slope - T::lit(3.0) * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < T::zero() {
        return mid;
    }
    let sign = if b.step > a.step { T::one() } else { -T::one() };
    let d2 = sign * disc.sqrt();
    let denom = b.slope - a.slope + T::lit(2.0) * d2;
    if denom == T::zero() {
        return mid;
    }
    let step = b.step - (b.step - a.step) * (b.slope + d2 - d1) / denom;
    let margin = (hi - lo) * T::lit(0.1);
    if !step.is_finite_val() || step < lo + margin || step > hi - margin {
        mid
    } else {
        step
    }
}

/// Minimizes `f` from `x0` with BFGS.
///
/// The inverse Hessian approximation starts at the identity, is rescaled by
/// `sᵀy / yᵀy` on its first update, and is reset whenever the curvature pair
/// fails `sᵀy > 1e-10 ‖s‖‖y‖`.
pub fn minimize<T, O>(f: &O, x0: DVector<T>, config: &OptimizerConfig<T>) -> Result<Minimum<T>>
where
    T: Real,
    O: Objective<T> + ?Sized,
{
    config.validate()?;
    let n = f.dimension();
    if x0.len() != n {
        return Err(Error::Argument(format!(
            "initial point has dimension {} but objective expects {n}",
            x0.len()
        )));
    }

    let mut x = x0;
    let (mut value, mut grad) = f.value_and_gradient(&x);
    let mut evaluations = 1;
    if !value.is_finite_val() {
        return Err(non_finite("objective value", &x));
    }
    if grad.len() != n || !all_finite(&grad) {
        return Err(non_finite("gradient", &x));
    }

    let mut h = DMatrix::<T>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![value];
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if grad.norm() <= config.gradient_tolerance {
            break;
        }
        let mut direction = -(&h * &grad);
        let mut slope = grad.dot(&direction);
        if !(slope < T::zero()) {
            h.fill_with_identity();
            fresh = true;
            direction = -grad.clone();
            slope = grad.dot(&direction);
        }
        let initial_step = if fresh {
            T::one().min(T::one() / grad.amax())
        } else {
            T::one()
        };

        let mut search = LineSearch {
            f,
            x: &x,
            direction: &direction,
            value0: value,
            slope0: slope,
            c1: config.c1,
            c2: config.c2,
            budget: config.max_line_search,
            evaluations: 0,
        };
        let accepted = search.run(initial_step).map(|p| search.refine(p));
        evaluations += search.evaluations;

        let Some(probe) = accepted else {
            if fresh {
                break;
            }
            // Retry once along steepest descent with a clean model.
            h.fill_with_identity();
            fresh = true;
            continue;
        };

        let s = &direction * probe.step;
        let y = &probe.gradient - &grad;
        x += &s;
        value = probe.value;
        grad = probe.gradient;
        iterations += 1;
        trace.push(value);

        let sy = s.dot(&y);
        if sy <= T::lit(1e-10) * s.norm() * y.norm() {
            h.fill_with_identity();
            fresh = true;
            continue;
        }
        if fresh {
            h.fill_with_identity();
            h *= sy / y.norm_squared();
            fresh = false;
        }
        let rho = T::one() / sy;
        let hy = &h * &y;
        let yhy = y.dot(&hy);
        let coeff = rho * rho * yhy + rho;
        // H ← H − ρ(Hy sᵀ + s yᵀH) + (ρ² yᵀHy + ρ) s sᵀ
        h.ger(-rho, &hy, &s, T::one());
        h.ger(-rho, &s, &hy, T::one());
        h.ger(coeff, &s, &s, T::one());
    }

    let gradient_norm = grad.norm();
    Ok(Minimum {
        point: x,
        value,
        gradient_norm,
        converged: gradient_norm <= config.gradient_tolerance,
        iterations,
        evaluations,
        trace,
    })
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences, `|a − n| / (|a| + |n| + 1e-12)` over coordinates.
pub fn check_gradient<T, O>(f: &O, point: &DVector<T>, step: T) -> Result<T>
where
    T: Real,
    O: Objective<T> + ?Sized,
{
    if !(step > T::zero()) {
        return Err(Error::Argument("finite-difference step must be positive".into()));
    }
    let analytic = f.gradient(point);
    let mut worst = T::zero();
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f.value(&probe);
        probe[i] = orig - step;
        let down = f.value(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (step + step);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + T::lit(1e-12));
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

/// Row-major flattening of a matrix into an optimizer vector.
pub fn flatten_row_major<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

/// Inverse of [`flatten_row_major`].
pub fn unflatten_row_major<T: Real>(v: &DVector<T>, rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bowl(a: DVector<f64>) -> impl Objective<f64> {
        FnObjective::new(a.len(), move |x: &DVector<f64>| {
            let d = x - &a;
            (d.norm_squared(), d * 2.0)
        })
    }

    fn rosenbrock() -> impl Objective<f64> {
        FnObjective::new(2, |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            (v, g)
        })
    }

    #[test]
    fn quadratic_bowl_reaches_center() {
        let a = DVector::from_vec(vec![3.0, -1.5, 0.25]);
        let f = bowl(a.clone());
        for start in [vec![0.0; 3], vec![100.0, -50.0, 7.0]] {
            let m = minimize(&f, DVector::from_vec(start), &OptimizerConfig::default()).unwrap();
            assert!(m.converged);
            assert_abs_diff_eq!(m.point, a, epsilon = 1e-8);
        }
    }

    #[test]
    fn rosenbrock_from_classic_start() {
        let f = rosenbrock();
        let m = minimize(&f, DVector::from_vec(vec![-1.2, 1.0]), &OptimizerConfig::default()).unwrap();
        assert!(m.converged, "{m:?}");
        assert_abs_diff_eq!(m.point[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(m.point[1], 1.0, epsilon = 1e-5);
        // The oracle: the gradient vanishes at (1, 1).
        assert_eq!(f.gradient(&DVector::from_vec(vec![1.0, 1.0])).norm(), 0.0);
    }

    #[test]
    fn nan_gradient_at_start_is_an_error() {
        let f = FnObjective::new(1, |_: &DVector<f64>| (0.0, DVector::from_vec(vec![f64::NAN])));
        let err = minimize(&f, DVector::zeros(1), &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Optimization { .. }));
    }

    #[test]
    fn trace_is_monotone() {
        let f = rosenbrock();
        let m = minimize(&f, DVector::from_vec(vec![-1.2, 1.0]), &OptimizerConfig::default()).unwrap();
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(m.trace.len(), m.iterations + 1);
    }

    #[test]
    fn deterministic() {
        let f = rosenbrock();
        let cfg = OptimizerConfig::default();
        let a = minimize(&f, DVector::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
        let b = minimize(&f, DVector::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
        assert_eq!(a.point, b.point);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn works_in_single_precision() {
        let f = FnObjective::new(2, |x: &DVector<f32>| {
            let d = x - DVector::from_vec(vec![1.0f32, 2.0]);
            (d.norm_squared(), d * 2.0)
        });
        let cfg = OptimizerConfig {
            gradient_tolerance: 1e-4f32,
            ..Default::default()
        };
        let m = minimize(&f, DVector::zeros(2), &cfg).unwrap();
        assert!((m.point[1] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn bad_line_search_constants_rejected() {
        let cfg = OptimizerConfig::<f64> {
            c1: 0.5,
            c2: 0.1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gradient_check_on_exact_quadratic() {
        let f = FnObjective::new(3, |x: &DVector<f64>| (x.dot(x), x * 2.0));
        let p = DVector::from_vec(vec![0.3, -1.7, 2.2]);
        assert!(check_gradient(&f, &p, 1e-5).unwrap() < 1e-7);
    }

    #[test]
    fn gradient_check_detects_doubled_gradient() {
        let f = FnObjective::new(2, |x: &DVector<f64>| (x.dot(x), x * 4.0));
        let p = DVector::from_vec(vec![1.0, -2.0]);
        // |2g - g| / (2g + g)
        assert_abs_diff_eq!(check_gradient(&f, &p, 1e-5).unwrap(), 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn gradient_check_constant_function() {
        let f = FnObjective::new(2, |_: &DVector<f64>| (4.0, DVector::zeros(2)));
        assert!(check_gradient(&f, &DVector::from_vec(vec![1.0, 1.0]), 1e-5).unwrap() < 1e-9);
    }

    #[test]
    fn nonpositive_step_rejected() {
        let f = FnObjective::new(1, |x: &DVector<f64>| (x[0], DVector::from_vec(vec![1.0])));
        assert!(check_gradient(&f, &DVector::zeros(1), 0.0).is_err());
    }

    #[test]
    fn row_major_flatten_roundtrip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = flatten_row_major(&m);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unflatten_row_major(&v, 2, 3), m);
    }
}
