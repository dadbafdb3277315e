//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zeroshot::qp::QpProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Grid search over the problem's (finite) box. A coarse lattice locates the
/// basin; each finer level rescans a ±3-step window, recentring until the best
/// lattice point is the window centre, then halves the step down to
/// `final_step`.
pub fn grid_search_qp(p: &QpProblem<f64>, final_step: f64) -> Option<DVector<f64>> {
    let n = p.dimension();
    let lo: Vec<f64> = p.lower.iter().copied().collect();
    let hi: Vec<f64> = p.upper.iter().copied().collect();
    assert!(lo.iter().chain(hi.iter()).all(|v| v.is_finite()), "grid oracle needs a finite box");

    let scan = |from: &[f64], count: &[usize], h: f64| -> Option<(f64, DVector<f64>)> {
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut idx = vec![0usize; n];
        let mut x = DVector::zeros(n);
        loop {
            for i in 0..n {
                x[i] = (from[i] + idx[i] as f64 * h).min(hi[i]);
            }
            if p.max_violation(&x) <= 0.0 {
                let f = p.objective(&x);
                if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
                    best = Some((f, x.clone()));
                }
            }
            let mut k = 0;
            loop {
                if k == n {
                    return best;
                }
                idx[k] += 1;
                if idx[k] < count[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    };

    let mut h = 0.125;
    let count: Vec<usize> = (0..n).map(|i| ((hi[i] - lo[i]) / h).ceil() as usize + 1).collect();
    let (mut best_f, mut center) = scan(&lo, &count, h)?;
    loop {
        h = (h / 2.0).max(final_step);
        for _ in 0..10_000 {
            let from: Vec<f64> = (0..n).map(|i| (center[i] - 3.0 * h).max(lo[i])).collect();
            let count: Vec<usize> = (0..n)
                .map(|i| (((center[i] + 3.0 * h).min(hi[i]) - from[i]) / h).round() as usize + 1)
                .collect();
            match scan(&from, &count, h) {
                Some((f, x)) if f < best_f => {
                    best_f = f;
                    center = x;
                }
                _ => break,
            }
        }
        if h <= final_step {
            return Some(center);
        }
    }
}

/// Nested grid search for strictly convex QPs with a finite box and no
/// equalities. The last coordinate is minimised exactly over its feasible
/// interval; every other coordinate is grid-searched over the interval where
/// the inner coordinates still have a feasible completion (found by
/// Fourier-Motzkin elimination), with the inner ones minimised out. Partial
/// minimisation keeps the function convex, so the minimiser always lies
/// between the neighbours of the best grid point, which is the bracket each
/// refinement keeps. Returns `None` when infeasible.
pub fn nested_grid_search_qp(p: &QpProblem<f64>, final_step: f64) -> Option<DVector<f64>> {
    assert!(p.lower.iter().chain(p.upper.iter()).all(|v| v.is_finite()), "grid oracle needs a finite box");
    assert_eq!(p.a_eq.nrows(), 0, "grid oracle does not handle equalities");
    let n = p.dimension();
    // systems[k]: rows over x[..=k] describing the projection of the feasible set.
    let mut rows: Vec<(Vec<f64>, f64)> = (0..p.a_ineq.nrows())
        .map(|i| (p.a_ineq.row(i).iter().copied().collect(), p.b_ineq[i]))
        .collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), p.upper[j]));
        e[j] = -1.0;
        rows.push((e, -p.lower[j]));
    }
    let mut systems = vec![Vec::new(); n];
    systems[n - 1] = rows;
    for k in (1..n).rev() {
        let (mut keep, mut pos, mut neg) = (Vec::new(), Vec::new(), Vec::new());
        for (a, b) in &systems[k] {
            if a[k].abs() < 1e-14 {
                keep.push((a.clone(), *b));
            } else if a[k] > 0.0 {
                pos.push((a.clone(), *b));
            } else {
                neg.push((a.clone(), *b));
            }
        }
        for (ap, bp) in &pos {
            for (an, bn) in &neg {
                let (sp, sn) = (1.0 / ap[k], 1.0 / -an[k]);
                let mut a: Vec<f64> = (0..n).map(|j| ap[j] * sp + an[j] * sn).collect();
                a[k] = 0.0;
                keep.push((a, bp * sp + bn * sn));
            }
        }
        systems[k - 1] = keep;
    }
    let mut x = DVector::zeros(n);
    let f = minimise_from(p, &systems, 0, &mut x, final_step);
    f.is_finite().then_some(x)
}

/// Interval of `x[k]` allowed by `rows` with `x[..k]` fixed.
fn interval(rows: &[(Vec<f64>, f64)], k: usize, x: &DVector<f64>) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (a, b) in rows {
        let room = b - (0..k).map(|j| a[j] * x[j]).sum::<f64>();
        if a[k] > 1e-14 {
            hi = hi.min(room / a[k]);
        } else if a[k] < -1e-14 {
            lo = lo.max(room / a[k]);
        } else if room < -1e-9 {
            return None;
        }
    }
    if lo > hi + 1e-9 {
        return None;
    }
    Some((lo.min(hi), hi.max(lo)))
}

/// Minimises over coordinates `k..` with `x[..k]` fixed; leaves the
/// minimiser in `x[k..]` and returns the objective (`+inf` if infeasible).
fn minimise_from(p: &QpProblem<f64>, systems: &[Vec<(Vec<f64>, f64)>], k: usize, x: &mut DVector<f64>, final_step: f64) -> f64 {
    let n = p.dimension();
    let Some((lo, hi)) = interval(&systems[k], k, x) else {
        return f64::INFINITY;
    };
    if k + 1 == n {
        let cross: f64 = (0..k).map(|j| p.quadratic[(k, j)] * x[j]).sum();
        x[k] = (-(cross + p.linear[k]) / p.quadratic[(k, k)]).clamp(lo, hi);
        return p.objective(x);
    }
    let points = 9;
    let (mut a, mut b) = (lo, hi);
    let mut best = (f64::INFINITY, lo);
    loop {
        let h = (b - a) / (points - 1) as f64;
        for i in 0..points {
            let v = a + i as f64 * h;
            x[k] = v;
            let f = minimise_from(p, systems, k + 1, x, final_step);
            if f < best.0 {
                best = (f, v);
            }
        }
        if h <= final_step {
            break;
        }
        a = (best.1 - h).max(lo);
        b = (best.1 + h).min(hi);
    }
    x[k] = best.1;
    minimise_from(p, systems, k + 1, x, final_step)
}

/// Random strictly convex QP on `[-1, 1]^n` with two inequality rows that
/// keep a known interior point feasible.
pub fn random_box_qp(rng: &mut impl Rng, n: usize, n_ineq: usize) -> QpProblem<f64> {
    let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = r.transpose() * &r * 0.5 + DMatrix::identity(n, n);
    let lin = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let a = DMatrix::from_fn(n_ineq, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(n_ineq, |i, _| (a.row(i) * &x0)[0] + rng.random_range(0.05..0.5));
    QpProblem::new(q, lin)
        .with_inequalities(a, b)
        .with_bounds(DVector::from_element(n, -1.0), DVector::from_element(n, 1.0))
}

/// Exact minimizer by enumerating candidate active sets: every subset of the
/// inequality and bound rows (up to `n` minus the equality count) is made
/// tight, the resulting equality-constrained KKT system is solved, and the
/// best feasible stationary point wins. Exponential, fine for n ≤ 6.
pub fn enumerate_active_sets(p: &QpProblem<f64>) -> Option<DVector<f64>> {
    let n = p.dimension();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..p.a_ineq.nrows() {
        rows.push((p.a_ineq.row(i).transpose(), p.b_ineq[i]));
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        if p.upper[j].is_finite() {
            rows.push((e.clone(), p.upper[j]));
        }
        if p.lower[j].is_finite() {
            rows.push((-e, -p.lower[j]));
        }
    }
    let n_eq = p.a_eq.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << rows.len()) {
        let chosen: Vec<usize> = (0..rows.len()).filter(|&i| mask & (1 << i) != 0).collect();
        if chosen.len() + n_eq > n {
            continue;
        }
        let k = n_eq + chosen.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.quadratic);
        for i in 0..n {
            rhs[i] = -p.linear[i];
        }
        for r in 0..k {
            let (a, b) = if r < n_eq {
                (p.a_eq.row(r).transpose(), p.b_eq[r])
            } else {
                rows[chosen[r - n_eq]].clone()
            };
            for j in 0..n {
                kkt[(n + r, j)] = a[j];
                kkt[(j, n + r)] = a[j];
            }
            rhs[n + r] = b;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        if p.max_violation(&x) > 1e-9 {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().map_or(true, |(bf, _)| f < *bf - 1e-12) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}
