//! Convex quadratic programs
//!
//! ```text
//! minimize   ½ xᵀQx + qᵀx
//! subject to A_ineq x ≤ b_ineq,  A_eq x = b_eq,  lower ≤ x ≤ upper
//! ```
//!
//! solved with an operator-splitting (ADMM) iteration on the stacked form
//! `l ≤ Ax ≤ u`, Ruiz equilibration, adaptive penalty and a final polish that
//! solves the KKT system of the guessed active set exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct QpProblem<T: Real> {
    pub quadratic: DMatrix<T>,
    pub linear: DVector<T>,
    pub a_ineq: DMatrix<T>,
    pub b_ineq: DVector<T>,
    pub a_eq: DMatrix<T>,
    pub b_eq: DVector<T>,
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Real> QpProblem<T> {
    /// Unconstrained problem; add constraints with the `with_*` builders.
    pub fn new(quadratic: DMatrix<T>, linear: DVector<T>) -> Self {
        let n = linear.len();
        Self {
            quadratic,
            linear,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: DVector::from_element(n, -T::infinity()),
            upper: DVector::from_element(n, T::infinity()),
        }
    }

    pub fn with_inequalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<T>, upper: DVector<T>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dimension(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        (&self.quadratic * x).dot(x) * T::lit(0.5) + self.linear.dot(x)
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &DVector<T>) -> T {
        let mut worst = T::zero();
        let ax = &self.a_ineq * x;
        for i in 0..ax.len() {
            worst = worst.max(ax[i] - self.b_ineq[i]);
        }
        let ex = &self.a_eq * x;
        for i in 0..ex.len() {
            worst = worst.max((ex[i] - self.b_eq[i]).abs());
        }
        for i in 0..x.len() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dimension();
        let q = &self.quadratic;
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Argument(format!(
                "quadratic term is {}x{} but the problem has {n} variables",
                q.nrows(),
                q.ncols()
            )));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(Error::Argument("inequality block has inconsistent dimensions".into()));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::Argument("equality block has inconsistent dimensions".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Argument("bounds have inconsistent dimensions".into()));
        }
        let finite = |m: &[T]| m.iter().all(|v| v.is_finite_val());
        if !finite(q.as_slice())
            || !finite(self.linear.as_slice())
            || !finite(self.a_ineq.as_slice())
            || !finite(self.b_ineq.as_slice())
            || !finite(self.a_eq.as_slice())
            || !finite(self.b_eq.as_slice())
        {
            return Err(Error::Argument("problem data contains non-finite entries".into()));
        }
        for i in 0..n {
            let (lo, up) = (self.lower[i], self.upper[i]);
            if lo.to_f64_lossy().is_nan() || up.to_f64_lossy().is_nan() || lo > up {
                return Err(Error::Argument(format!("bounds on x[{i}] are empty or NaN")));
            }
        }
        linalg::ensure_symmetric(q, T::lit(1e-8), "quadratic term")?;
        if n > 0 && !linalg::is_psd(q, T::lit(1e-8)) {
            return Err(Error::Argument("quadratic term is indefinite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    /// The objective is unbounded below on the feasible set.
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T: Real> {
    pub x: DVector<T>,
    pub objective: T,
    /// Largest constraint violation.
    pub primal_residual: T,
    /// Stationarity residual `‖Qx + q + Aᵀy‖∞`.
    pub dual_residual: T,
    /// Largest `min(|y_i|, slack_i)` over constraints.
    pub complementarity: T,
    pub status: QpStatus,
    pub iterations: usize,
    pub polished: bool,
    pub y_ineq: DVector<T>,
    pub y_eq: DVector<T>,
    /// Multipliers of the box constraints, zero on unbounded coordinates.
    pub y_box: DVector<T>,
}

#[derive(Debug, Clone)]
pub struct QpSettings<T> {
    pub tolerance: T,
    pub max_iterations: usize,
    pub rho: T,
    pub sigma: T,
    pub relaxation: T,
    pub scaling_iterations: usize,
    pub check_interval: usize,
    pub polish: bool,
    pub infeasibility_tolerance: T,
}

impl<T: Real> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            tolerance: T::lit(1e-6),
            max_iterations: 20_000,
            rho: T::lit(0.1),
            sigma: T::lit(1e-6),
            relaxation: T::lit(1.6),
            scaling_iterations: 15,
            check_interval: 10,
            polish: true,
            infeasibility_tolerance: T::lit(1e-6),
        }
    }
}

/// Solves with default settings except for tolerance and iteration cap.
pub fn solve_qp<T: Real>(problem: &QpProblem<T>, tolerance: T, max_iterations: usize) -> Result<QpSolution<T>> {
    let settings = QpSettings {
        tolerance,
        max_iterations,
        ..QpSettings::default()
    };
    solve_qp_with(problem, &settings)
}

/// Constraint system stacked as `l ≤ A x ≤ u`.
struct Stacked<T: Real> {
    a: DMatrix<T>,
    l: DVector<T>,
    u: DVector<T>,
    /// Box row index -> variable index.
    box_vars: Vec<usize>,
    n_ineq: usize,
    n_eq: usize,
}

impl<T: Real> Stacked<T> {
    fn new(p: &QpProblem<T>) -> Self {
        let n = p.dimension();
        let box_vars: Vec<usize> = (0..n)
            .filter(|&i| p.lower[i].is_finite_val() || p.upper[i].is_finite_val())
            .collect();
        let (n_ineq, n_eq) = (p.b_ineq.len(), p.b_eq.len());
        let m = n_ineq + n_eq + box_vars.len();
        let mut a = DMatrix::zeros(m, n);
        let mut l = DVector::from_element(m, -T::infinity());
        let mut u = DVector::from_element(m, T::infinity());
        for i in 0..n_ineq {
            a.row_mut(i).copy_from(&p.a_ineq.row(i));
            u[i] = p.b_ineq[i];
        }
        for i in 0..n_eq {
            let r = n_ineq + i;
            a.row_mut(r).copy_from(&p.a_eq.row(i));
            l[r] = p.b_eq[i];
            u[r] = p.b_eq[i];
        }
        for (k, &j) in box_vars.iter().enumerate() {
            let r = n_ineq + n_eq + k;
            a[(r, j)] = T::one();
            l[r] = p.lower[j];
            u[r] = p.upper[j];
        }
        Self {
            a,
            l,
            u,
            box_vars,
            n_ineq,
            n_eq,
        }
    }

    fn m(&self) -> usize {
        self.l.len()
    }

    fn project(&self, v: &DVector<T>) -> DVector<T> {
        DVector::from_fn(v.len(), |i, _| v[i].max(self.l[i]).min(self.u[i]))
    }
}

fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    if v.is_empty() {
        T::zero()
    } else {
        v.amax()
    }
}

struct Residuals<T> {
    primal: T,
    dual: T,
    complementarity: T,
}

fn residuals<T: Real>(p: &QpProblem<T>, s: &Stacked<T>, x: &DVector<T>, y: &DVector<T>) -> Residuals<T> {
    let ax = &s.a * x;
    let primal = inf_norm(&(&ax - s.project(&ax)));
    let stationarity = &p.quadratic * x + &p.linear + s.a.tr_mul(y);
    let mut complementarity = T::zero();
    for i in 0..y.len() {
        let c = if y[i] >= T::zero() {
            y[i].min((s.u[i] - ax[i]).abs())
        } else {
            (-y[i]).min((ax[i] - s.l[i]).abs())
        };
        complementarity = complementarity.max(c);
    }
    Residuals {
        primal,
        dual: inf_norm(&stationarity),
        complementarity,
    }
}

/// Diagonal equilibration of the KKT matrix plus a cost scale factor.
struct Scaling<T: Real> {
    d: DVector<T>,
    e: DVector<T>,
    cost: T,
}

fn ruiz<T: Real>(p: &DMatrix<T>, q: &DVector<T>, a: &DMatrix<T>, iterations: usize) -> (Scaling<T>, DMatrix<T>, DVector<T>, DMatrix<T>) {
    let (n, m) = (p.nrows(), a.nrows());
    let mut ps = p.clone();
    let mut as_ = a.clone();
    let mut d = DVector::from_element(n, T::one());
    let mut e = DVector::from_element(m, T::one());
    let clamp = |v: T| {
        if v < T::lit(1e-4) {
            T::one()
        } else {
            v.min(T::lit(1e4))
        }
    };
    for _ in 0..iterations {
        let mut dx = DVector::from_element(n, T::zero());
        for j in 0..n {
            let mut norm = T::zero();
            for i in 0..n {
                norm = norm.max(ps[(i, j)].abs());
            }
            for i in 0..m {
                norm = norm.max(as_[(i, j)].abs());
            }
            dx[j] = T::one() / clamp(norm).sqrt();
        }
        let mut dz = DVector::from_element(m, T::zero());
        for i in 0..m {
            let mut norm = T::zero();
            for j in 0..n {
                norm = norm.max(as_[(i, j)].abs());
            }
            dz[i] = T::one() / clamp(norm).sqrt();
        }
        for i in 0..n {
            for j in 0..n {
                ps[(i, j)] *= dx[i] * dx[j];
            }
        }
        for i in 0..m {
            for j in 0..n {
                as_[(i, j)] *= dz[i] * dx[j];
            }
        }
        d.component_mul_assign(&dx);
        e.component_mul_assign(&dz);
    }
    let qs = q.component_mul(&d);
    let mut col_mean = T::zero();
    for j in 0..n {
        let mut norm = T::zero();
        for i in 0..n {
            norm = norm.max(ps[(i, j)].abs());
        }
        col_mean += norm;
    }
    if n > 0 {
        col_mean /= T::from_usize(n).unwrap();
    }
    let cost = T::one() / clamp(col_mean.max(inf_norm(&qs)));
    ps *= cost;
    let qs = qs * cost;
    (Scaling { d, e, cost }, ps, qs, as_)
}

pub fn solve_qp_with<T: Real>(problem: &QpProblem<T>, settings: &QpSettings<T>) -> Result<QpSolution<T>> {
    problem.validate()?;
    let stacked = Stacked::new(problem);
    let n = problem.dimension();
    let m = stacked.m();

    let (sc, p, q, a) = ruiz(&problem.quadratic, &problem.linear, &stacked.a, settings.scaling_iterations);
    let lo = DVector::from_fn(m, |i, _| stacked.l[i] * sc.e[i]);
    let up = DVector::from_fn(m, |i, _| stacked.u[i] * sc.e[i]);
    let is_eq: Vec<bool> = (0..m).map(|i| stacked.l[i] == stacked.u[i]).collect();

    let unscale_x = |x: &DVector<T>| x.component_mul(&sc.d);
    let unscale_y = |y: &DVector<T>| y.component_mul(&sc.e) / sc.cost;
    let unscale_z = |z: &DVector<T>| z.component_div(&sc.e);

    let mut rho = settings.rho;
    let rho_vec = |rho: T| DVector::from_fn(m, |i, _| if is_eq[i] { rho * T::lit(1e3) } else { rho });
    let factor = |rv: &DVector<T>| -> Result<nalgebra::Cholesky<T, nalgebra::Dyn>> {
        let mut kkt = p.clone();
        for i in 0..n {
            kkt[(i, i)] += settings.sigma;
        }
        let weighted = DMatrix::from_fn(m, n, |i, j| a[(i, j)] * rv[i]);
        kkt += a.tr_mul(&weighted);
        kkt.cholesky()
            .ok_or_else(|| Error::Argument("KKT matrix is not positive definite".into()))
    };
    let mut rv = rho_vec(rho);
    let mut chol = factor(&rv)?;

    let mut x = DVector::<T>::zeros(n);
    let mut z = DVector::<T>::zeros(m);
    let mut y = DVector::<T>::zeros(m);
    let alpha = settings.relaxation;
    let tol = settings.tolerance;
    let mut polish_threshold = tol;
    let mut best: Option<(DVector<T>, DVector<T>, bool)> = None;
    let mut iter = 0;
    let mut status = QpStatus::MaxIter;

    while iter < settings.max_iterations {
        iter += 1;
        let rhs = &x * settings.sigma - &q + a.tr_mul(&(rv.component_mul(&z) - &y));
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &a * &x_tilde;
        let x_new = &x_tilde * alpha + &x * (T::one() - alpha);
        let z_relax = &z_tilde * alpha + &z * (T::one() - alpha);
        let z_new = DVector::from_fn(m, |i, _| (z_relax[i] + y[i] / rv[i]).max(lo[i]).min(up[i]));
        let y_new = &y + rv.component_mul(&(&z_relax - &z_new));
        let dx = &x_new - &x;
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        if iter % settings.check_interval != 0 && iter != settings.max_iterations {
            continue;
        }

        let xu = unscale_x(&x);
        let yu = unscale_y(&y);
        let zu = unscale_z(&z);
        let axu = &stacked.a * &xu;
        let r_prim = inf_norm(&(&axu - &zu));
        let pxu = &problem.quadratic * &xu;
        let atyu = stacked.a.tr_mul(&yu);
        let r_dual = inf_norm(&(&pxu + &problem.linear + &atyu));
        let eps_prim = polish_threshold * (T::one() + inf_norm(&axu).max(inf_norm(&zu)));
        let eps_dual = polish_threshold
            * (T::one() + inf_norm(&pxu).max(inf_norm(&atyu)).max(inf_norm(&problem.linear)));

        if r_prim <= eps_prim && r_dual <= eps_dual {
            let admm = residuals(problem, &stacked, &xu, &yu);
            let admm_ok = admm.primal <= tol && admm.dual <= tol && admm.complementarity <= tol;
            if settings.polish {
                if let Some((xp, yp)) = polish(problem, &stacked, &zu, &yu, tol) {
                    best = Some((xp, yp, true));
                    status = QpStatus::Optimal;
                    break;
                }
            }
            if admm_ok {
                best = Some((xu, yu, false));
                status = QpStatus::Optimal;
                break;
            }
            polish_threshold *= T::lit(0.1);
        }

        if primal_infeasible(&stacked, &dy, &sc, settings.infeasibility_tolerance) {
            best = Some((xu, yu, false));
            status = QpStatus::Infeasible;
            break;
        }
        if dual_infeasible(problem, &stacked, &dx, &sc, settings.infeasibility_tolerance) {
            best = Some((xu, yu, false));
            status = QpStatus::Unbounded;
            break;
        }

        // Penalty adaptation from the scaled residual balance.
        let ax = &a * &x;
        let px = &p * &x;
        let aty = a.tr_mul(&y);
        let tiny = T::lit(1e-10);
        let rp = inf_norm(&(&ax - &z)) / inf_norm(&ax).max(inf_norm(&z)).max(tiny);
        let rd = inf_norm(&(&px + &q + &aty)) / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&q)).max(tiny);
        if rd > T::zero() && rp > T::zero() {
            let proposed = (rho * (rp / rd).sqrt()).max(T::lit(1e-6)).min(T::lit(1e6));
            if proposed > rho * T::lit(5.0) || proposed < rho / T::lit(5.0) {
                rho = proposed;
                rv = rho_vec(rho);
                chol = factor(&rv)?;
            }
        }
    }

    let (x_out, y_out, polished) = best.unwrap_or_else(|| (unscale_x(&x), unscale_y(&y), false));
    let res = residuals(problem, &stacked, &x_out, &y_out);
    let split = |from: usize, len: usize| DVector::from_fn(len, |i, _| y_out[from + i]);
    let mut y_box = DVector::zeros(n);
    for (k, &j) in stacked.box_vars.iter().enumerate() {
        y_box[j] = y_out[stacked.n_ineq + stacked.n_eq + k];
    }
    Ok(QpSolution {
        objective: problem.objective(&x_out),
        primal_residual: res.primal,
        dual_residual: res.dual,
        complementarity: res.complementarity,
        status,
        iterations: iter,
        polished,
        y_ineq: split(0, stacked.n_ineq),
        y_eq: split(stacked.n_ineq, stacked.n_eq),
        y_box,
        x: x_out,
    })
}

fn primal_infeasible<T: Real>(s: &Stacked<T>, dy_scaled: &DVector<T>, sc: &Scaling<T>, eps: T) -> bool {
    if dy_scaled.is_empty() {
        return false;
    }
    let dy = dy_scaled.component_mul(&sc.e);
    let norm = inf_norm(&dy);
    if norm <= T::lit(1e-12) {
        return false;
    }
    let cutoff = eps * norm;
    let mut support = T::zero();
    for i in 0..dy.len() {
        let v = dy[i];
        if v > cutoff {
            if !s.u[i].is_finite_val() {
                return false;
            }
            support += s.u[i] * v;
        } else if v < -cutoff {
            if !s.l[i].is_finite_val() {
                return false;
            }
            support += s.l[i] * v;
        }
    }
    inf_norm(&s.a.tr_mul(&dy)) <= cutoff && support < -cutoff
}

fn dual_infeasible<T: Real>(p: &QpProblem<T>, s: &Stacked<T>, dx_scaled: &DVector<T>, sc: &Scaling<T>, eps: T) -> bool {
    let dx = dx_scaled.component_mul(&sc.d);
    let norm = inf_norm(&dx);
    if norm <= T::lit(1e-12) {
        return false;
    }
    let cutoff = eps * norm;
    if inf_norm(&(&p.quadratic * &dx)) > cutoff || p.linear.dot(&dx) >= -cutoff {
        return false;
    }
    let adx = &s.a * &dx;
    (0..adx.len()).all(|i| {
        let upper_ok = !s.u[i].is_finite_val() || adx[i] <= cutoff;
        let lower_ok = !s.l[i].is_finite_val() || adx[i] >= -cutoff;
        upper_ok && lower_ok
    })
}

/// Solves the equality-constrained QP on the active set guessed from the
/// ADMM iterate. Returns the polished primal/dual pair when it is a KKT point
/// to within `tol`.
fn polish<T: Real>(
    p: &QpProblem<T>,
    s: &Stacked<T>,
    z: &DVector<T>,
    y: &DVector<T>,
    tol: T,
) -> Option<(DVector<T>, DVector<T>)> {
    let mut active = Vec::new();
    let mut target = Vec::new();
    for i in 0..s.m() {
        if s.l[i] == s.u[i] {
            active.push(i);
            target.push(s.l[i]);
        } else if s.l[i].is_finite_val() && z[i] - s.l[i] < -y[i] {
            active.push(i);
            target.push(s.l[i]);
        } else if s.u[i].is_finite_val() && s.u[i] - z[i] < y[i] {
            active.push(i);
            target.push(s.u[i]);
        }
    }
    // Dependent active rows can share a multiplier in a way that puts the
    // wrong sign on a bound; such rows are dropped and the system re-solved.
    for _ in 0..4 {
        let (xp, yp) = solve_active(p, s, &active, &target)?;
        let wrong: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|&(r, &i)| {
                let on_upper = target[r] == s.u[i];
                s.l[i] != s.u[i] && ((on_upper && yp[i] < -tol) || (!on_upper && yp[i] > tol))
            })
            .map(|(r, _)| r)
            .collect();
        if wrong.is_empty() {
            let res = residuals(p, s, &xp, &yp);
            return (res.primal <= tol && res.dual <= tol && res.complementarity <= tol).then_some((xp, yp));
        }
        for r in wrong.into_iter().rev() {
            active.remove(r);
            target.remove(r);
        }
    }
    None
}

fn solve_active<T: Real>(
    p: &QpProblem<T>,
    s: &Stacked<T>,
    active: &[usize],
    target: &[T],
) -> Option<(DVector<T>, DVector<T>)> {
    let n = p.dimension();
    let k = active.len();
    let dim = n + k;
    let delta = T::lit(1e-9);
    let mut exact = DMatrix::<T>::zeros(dim, dim);
    exact.view_mut((0, 0), (n, n)).copy_from(&p.quadratic);
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            exact[(n + r, j)] = s.a[(i, j)];
            exact[(j, n + r)] = s.a[(i, j)];
        }
    }
    let mut regularized = exact.clone();
    for i in 0..n {
        regularized[(i, i)] += delta;
    }
    for i in n..dim {
        regularized[(i, i)] -= delta;
    }
    let lu = regularized.lu();
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -p.linear[i];
    }
    for (r, &t) in target.iter().enumerate() {
        rhs[n + r] = t;
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..8 {
        let r = &rhs - &exact * &sol;
        if inf_norm(&r) <= T::lit(1e-14) {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if !sol.iter().all(|v| v.is_finite_val()) {
        return None;
    }
    let xp = DVector::from_fn(n, |i, _| sol[i]);
    let mut yp = DVector::zeros(s.m());
    for (r, &i) in active.iter().enumerate() {
        yp[i] = sol[n + r];
    }
    Some((xp, yp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn m(r: usize, c: usize, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, x)
    }

    #[test]
    fn single_active_lower_bound() {
        // min x² s.t. x ≥ 1
        let p = QpProblem::new(m(1, 1, &[2.0]), v(&[0.0])).with_bounds(v(&[1.0]), v(&[f64::INFINITY]));
        let s = solve_qp(&p, 1e-6, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn same_via_inequality_row() {
        let p = QpProblem::new(m(1, 1, &[2.0]), v(&[0.0])).with_inequalities(m(1, 1, &[-1.0]), v(&[-1.0]));
        let s = solve_qp(&p, 1e-6, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-8);
        assert!(s.y_ineq[0] > 0.0);
    }

    #[test]
    fn symmetric_equality_with_box() {
        // min (x−2)² + (y−2)² s.t. x + y = 1, 0 ≤ x, y ≤ 1
        let p = QpProblem::new(m(2, 2, &[2.0, 0.0, 0.0, 2.0]), v(&[-4.0, -4.0]))
            .with_equalities(m(1, 2, &[1.0, 1.0]), v(&[1.0]))
            .with_bounds(v(&[0.0, 0.0]), v(&[1.0, 1.0]));
        let s = solve_qp(&p, 1e-6, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, v(&[0.5, 0.5]), epsilon = 1e-8);
        assert!(s.primal_residual <= 1e-6 && s.dual_residual <= 1e-6 && s.complementarity <= 1e-6);
    }

    #[test]
    fn indefinite_rejected() {
        let p = QpProblem::new(m(2, 2, &[1.0, 0.0, 0.0, -1.0]), v(&[0.0, 0.0]));
        assert!(matches!(solve_qp(&p, 1e-6, 100), Err(Error::Argument(_))));
    }

    #[test]
    fn empty_box_rejected() {
        let p = QpProblem::new(m(1, 1, &[1.0]), v(&[0.0])).with_bounds(v(&[1.0]), v(&[0.0]));
        assert!(solve_qp(&p, 1e-6, 100).is_err());
    }

    #[test]
    fn detects_infeasibility() {
        // x ≤ −1 and x ≥ 1
        let p = QpProblem::new(m(1, 1, &[1.0]), v(&[0.0]))
            .with_inequalities(m(2, 1, &[1.0, -1.0]), v(&[-1.0, -1.0]));
        let s = solve_qp(&p, 1e-6, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let p = QpProblem::new(m(1, 1, &[0.0]), v(&[1.0]));
        let s = solve_qp(&p, 1e-6, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Unbounded);
    }

    #[test]
    fn linear_program_corner() {
        // min −x − y s.t. x + 2y ≤ 4, 3x + y ≤ 6, x, y ≥ 0 → (1.6, 1.2)
        let p = QpProblem::new(DMatrix::zeros(2, 2), v(&[-1.0, -1.0]))
            .with_inequalities(m(2, 2, &[1.0, 2.0, 3.0, 1.0]), v(&[4.0, 6.0]))
            .with_bounds(v(&[0.0, 0.0]), v(&[f64::INFINITY, f64::INFINITY]));
        let s = solve_qp(&p, 1e-6, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, v(&[1.6, 1.2]), epsilon = 1e-7);
    }

    #[test]
    fn scale_invariance_of_argmin() {
        let q = m(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let lin = v(&[-1.0, 4.0]);
        let a = m(1, 2, &[1.0, 1.0]);
        let b = v(&[0.5]);
        let base = solve_qp(&QpProblem::new(q.clone(), lin.clone()).with_inequalities(a.clone(), b.clone()), 1e-8, 20_000).unwrap();
        let scaled = solve_qp(&QpProblem::new(q * 250.0, lin * 250.0).with_inequalities(a, b), 1e-8, 20_000).unwrap();
        assert_abs_diff_eq!(base.x, scaled.x, epsilon = 1e-6);
    }

    #[test]
    fn single_precision_solve() {
        let p = QpProblem::<f32>::new(DMatrix::from_row_slice(1, 1, &[2.0]), DVector::from_vec(vec![-2.0]))
            .with_bounds(DVector::from_vec(vec![0.0]), DVector::from_vec(vec![0.5]));
        let s = solve_qp(&p, 1e-4, 5_000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-4);
    }
}
