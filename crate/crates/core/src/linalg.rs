//! Dense symmetric-matrix helpers shared by the kernel and transfer code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative eigenvalue floor used for inverse square roots of kernel matrices.
pub const RELATIVE_EIGEN_FLOOR: f64 = 1e-8;

/// Largest absolute asymmetry `|m_ij − m_ji|`.
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

pub fn is_symmetric<T: Real>(m: &DMatrix<T>, tol: T) -> bool {
    m.is_square() && asymmetry(m) <= tol
}

pub fn ensure_symmetric<T: Real>(m: &DMatrix<T>, tol: T, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Argument(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = T::one().max(m.amax());
    if asymmetry(m) > tol * scale {
        return Err(Error::Argument(format!("{what} is not symmetric")));
    }
    Ok(())
}

/// Eigendecomposition of the symmetrized input.
pub fn symmetric_eigen<T: Real>(m: &DMatrix<T>) -> SymmetricEigen<T, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * T::lit(0.5);
    SymmetricEigen::new(sym)
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    symmetric_eigen(m).eigenvalues.min()
}

/// PSD up to `min eigenvalue ≥ −rel · |trace|`.
pub fn is_psd<T: Real>(m: &DMatrix<T>, rel: T) -> bool {
    let trace = m.trace().abs();
    min_eigenvalue(m) >= -rel * trace.max(T::default_epsilon())
}

/// Matched square-root factors of a symmetric PSD matrix computed from one
/// eigendecomposition with eigenvalues clamped from below at `floor`.
#[derive(Debug, Clone)]
pub struct SymmetricRoots<T: Real> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
    pub floor: T,
}

impl<T: Real> SymmetricRoots<T> {
    pub fn new(m: &DMatrix<T>, floor: T) -> Result<Self> {
        ensure_symmetric(m, T::lit(1e-8), "matrix")?;
        let eig = symmetric_eigen(m);
        Ok(Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            floor,
        })
    }

    /// Uses `RELATIVE_EIGEN_FLOOR · λ_max` as the floor.
    pub fn with_relative_floor(m: &DMatrix<T>) -> Result<Self> {
        ensure_symmetric(m, T::lit(1e-8), "matrix")?;
        let eig = symmetric_eigen(m);
        let top = eig.eigenvalues.max().max(T::zero());
        let floor = (T::lit(RELATIVE_EIGEN_FLOOR) * top).max(T::min_value().unwrap_or(T::default_epsilon()));
        Ok(Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            floor,
        })
    }

    fn compose(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let v = &self.eigenvectors;
        let d = DVector::from_iterator(self.eigenvalues.len(), self.eigenvalues.iter().map(|&l| f(l)));
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * d[j]);
        scaled * v.transpose()
    }

    /// `V diag(max(λ, floor)^{-1/2}) Vᵀ`.
    pub fn inverse_sqrt(&self) -> DMatrix<T> {
        let floor = self.floor;
        self.compose(|l| T::one() / l.max(floor).sqrt())
    }

    /// `M · M^{-1/2}`: the square root on the range of `M`, consistent with
    /// [`Self::inverse_sqrt`] so that `M^{-1/2} M M^{-1/2}` stays a projector.
    pub fn range_sqrt(&self) -> DMatrix<T> {
        let floor = self.floor;
        self.compose(|l| l.max(T::zero()) / l.max(floor).sqrt())
    }
}

/// `V diag(max(λ, floor)^{-1/2}) Vᵀ` for a symmetric matrix.
pub fn inverse_sqrt<T: Real>(m: &DMatrix<T>, floor: T) -> Result<DMatrix<T>> {
    Ok(SymmetricRoots::new(m, floor)?.inverse_sqrt())
}

/// Solves `(A + jitter I) X = B` for symmetric positive definite `A`.
pub fn spd_solve<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, jitter: T) -> Option<DMatrix<T>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    m.cholesky().map(|c| c.solve(b))
}
