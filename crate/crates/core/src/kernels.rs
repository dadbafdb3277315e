//! Kernel functions on visual and text items and kernel-matrix assembly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::linalg;
use crate::text::{BagOfTriplets, EmbeddingTable};

pub use crate::linalg::inverse_sqrt;

/// Which kernel to evaluate.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// `exp(-gamma * |a - b|)`, or `exp(-gamma * |a - b|^2)` when `squared`.
    Rbf { gamma: f64, squared: bool },
    Linear,
    /// Items are indices into a fixed matrix.
    Precomputed(Arc<KernelMatrix>),
    /// Items are bags of triplets built over this table.
    DistributionalSemantic(Arc<EmbeddingTable>),
}

/// Serializable description of the vector kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorKernel {
    Rbf { gamma: f64, squared: bool },
    Linear,
}

impl From<VectorKernel> for KernelSpec {
    fn from(k: VectorKernel) -> Self {
        match k {
            VectorKernel::Rbf { gamma, squared } => KernelSpec::Rbf { gamma, squared },
            VectorKernel::Linear => KernelSpec::Linear,
        }
    }
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        ensure_arg!(gamma > 0.0 && gamma.is_finite(), "rbf rate must be positive, got {gamma}");
        Ok(KernelSpec::Rbf { gamma, squared: false })
    }

    pub fn rbf_squared(gamma: f64) -> Result<Self> {
        ensure_arg!(gamma > 0.0 && gamma.is_finite(), "rbf rate must be positive, got {gamma}");
        Ok(KernelSpec::Rbf { gamma, squared: true })
    }
}

/// Something a kernel can be evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum Item<'a> {
    Vector(&'a [f64]),
    Bag(&'a BagOfTriplets),
    Index(usize),
}

fn vectors<'a>(a: Item<'a>, b: Item<'a>) -> Result<(&'a [f64], &'a [f64])> {
    match (a, b) {
        (Item::Vector(x), Item::Vector(y)) => {
            ensure_arg!(x.len() == y.len(), "dimension mismatch: {} vs {}", x.len(), y.len());
            Ok((x, y))
        }
        _ => Err(Error::Argument("this kernel needs vector items".into())),
    }
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn eval_kernel(spec: &KernelSpec, a: Item<'_>, b: Item<'_>) -> Result<f64> {
    match spec {
        KernelSpec::Rbf { gamma, squared } => {
            let (x, y) = vectors(a, b)?;
            let d2 = squared_distance(x, y);
            let d = if *squared { d2 } else { d2.sqrt() };
            Ok((-gamma * d).exp())
        }
        KernelSpec::Linear => {
            let (x, y) = vectors(a, b)?;
            Ok(dot(x, y))
        }
        KernelSpec::Precomputed(m) => match (a, b) {
            (Item::Index(i), Item::Index(j)) => {
                let n = m.len();
                ensure_arg!(i < n && j < n, "index out of range for a {n}x{n} kernel");
                Ok(m.values()[(i, j)])
            }
            _ => Err(Error::Argument("precomputed kernels need index items".into())),
        },
        KernelSpec::DistributionalSemantic(table) => match (a, b) {
            (Item::Bag(x), Item::Bag(y)) => {
                ensure_arg!(
                    x.embeddings.ncols() == table.dim() && y.embeddings.ncols() == table.dim(),
                    "bag embedding width does not match the table"
                );
                Ok(ds_kernel(x, y))
            }
            _ => Err(Error::Argument("distributional kernels need bag items".into())),
        },
    }
}

/// `F_iᵀ P_i P_jᵀ F_j`.
pub fn ds_kernel(a: &BagOfTriplets, b: &BagOfTriplets) -> f64 {
    a.aggregate().dot(&b.aggregate())
}

/// Symmetric kernel matrix with the ids of the items behind each row.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    anchors: Vec<usize>,
}

impl KernelMatrix {
    /// Accepts matrices symmetric to within 1e-8 (relative to the largest
    /// entry) and stores the exactly symmetric average.
    pub fn new(values: DMatrix<f64>, anchors: Vec<usize>) -> Result<Self> {
        linalg::ensure_symmetric(&values, 1e-8, "kernel matrix")?;
        ensure_arg!(anchors.len() == values.nrows(), "anchor count does not match the matrix");
        ensure_arg!(values.iter().all(|v| v.is_finite()), "kernel matrix has non-finite entries");
        ensure_arg!(
            values.diagonal().iter().all(|&d| d >= 0.0),
            "kernel matrix has a negative diagonal entry"
        );
        let values = (&values + values.transpose()) * 0.5;
        Ok(Self { values, anchors })
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        Self::new(values, (0..n).collect())
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// Smallest eigenvalue is at least `-1e-8 * trace`.
    pub fn is_psd(&self) -> bool {
        let trace = self.values.trace().max(0.0);
        linalg::min_eigenvalue(&self.values) >= -1e-8 * trace
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        self.values.select_rows(rows).select_columns(cols)
    }
}

pub fn gram(spec: &KernelSpec, items: &[Item<'_>]) -> Result<KernelMatrix> {
    ensure_arg!(!items.is_empty(), "gram needs at least one item");
    let n = items.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = eval_kernel(spec, items[i], items[j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let anchors = items
        .iter()
        .enumerate()
        .map(|(i, it)| match it {
            Item::Index(k) => *k,
            _ => i,
        })
        .collect();
    KernelMatrix::new(m, anchors)
}

/// Entry `(i, j)` is `k(rows[i], cols[j])`.
pub fn cross_gram(spec: &KernelSpec, rows: &[Item<'_>], cols: &[Item<'_>]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in cols.iter().enumerate() {
            m[(i, j)] = eval_kernel(spec, *a, *b)?;
        }
    }
    Ok(m)
}

/// Rows of `m` as owned vectors, ready to be borrowed as items.
pub fn row_vectors(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn as_items(rows: &[Vec<f64>]) -> Vec<Item<'_>> {
    rows.iter().map(|r| Item::Vector(r)).collect()
}

/// Gram matrix over the rows of `x`.
pub fn gram_rows(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<KernelMatrix> {
    let rows = row_vectors(x);
    gram(spec, &as_items(&rows))
}

/// Kernel between every row of `a` and every row of `b`.
pub fn cross_rows(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (ra, rb) = (row_vectors(a), row_vectors(b));
    cross_gram(spec, &as_items(&ra), &as_items(&rb))
}

pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let rows = row_vectors(x);
    let mut d: Vec<f64> = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(squared_distance(&rows[i], &rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Rbf rate from the median heuristic: the kernel at the median pairwise
/// distance equals `exp(-1)`.
pub fn median_rbf(x: &DMatrix<f64>, squared: bool) -> KernelSpec {
    let med = median_pairwise_distance(x);
    let gamma = if squared { 1.0 / (med * med) } else { 1.0 / med };
    KernelSpec::Rbf { gamma, squared }
}

/// Kernel column `k(x)` of a single vector against the rows of `anchors`.
pub fn kernel_column(spec: &KernelSpec, anchors: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let xs = x.as_slice();
    let rows = row_vectors(anchors);
    let vals = rows
        .iter()
        .map(|r| eval_kernel(spec, Item::Vector(r), Item::Vector(xs)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rbf_values() {
        let k = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(eval_kernel(&k, Item::Vector(&[0.3, 1.0]), Item::Vector(&[0.3, 1.0])).unwrap(), 1.0);
        let v = eval_kernel(&k, Item::Vector(&[0.0]), Item::Vector(&[2.0])).unwrap();
        assert_relative_eq!(v, (-2.0f64).exp(), epsilon = 1e-15);
        assert!((v - 0.1353).abs() < 1e-4);
        let s = KernelSpec::rbf_squared(1.0).unwrap();
        let v = eval_kernel(&s, Item::Vector(&[0.0]), Item::Vector(&[2.0])).unwrap();
        assert_relative_eq!(v, (-4.0f64).exp(), epsilon = 1e-15);
        assert!(KernelSpec::rbf(0.0).is_err());
    }

    #[test]
    fn linear_and_mismatch() {
        assert_eq!(eval_kernel(&KernelSpec::Linear, Item::Vector(&[1., 2.]), Item::Vector(&[3., 4.])).unwrap(), 11.0);
        assert!(eval_kernel(&KernelSpec::Linear, Item::Vector(&[1.]), Item::Vector(&[3., 4.])).is_err());
        assert!(eval_kernel(&KernelSpec::Linear, Item::Index(0), Item::Index(0)).is_err());
    }

    #[test]
    fn precomputed_lookup() {
        let m = KernelMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let k = KernelSpec::Precomputed(Arc::new(m));
        assert_eq!(eval_kernel(&k, Item::Index(0), Item::Index(1)).unwrap(), 0.5);
        assert!(eval_kernel(&k, Item::Index(2), Item::Index(1)).is_err());
        assert!(KernelMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
    }

    fn bag(words: &[&str], freqs: &[f64], rows: &[&[f64]]) -> BagOfTriplets {
        BagOfTriplets {
            words: words.iter().map(|w| w.to_string()).collect(),
            frequencies: DVector::from_column_slice(freqs),
            embeddings: DMatrix::from_rows(&rows.iter().map(|r| nalgebra::RowDVector::from_row_slice(r)).collect::<Vec<_>>()),
        }
    }

    #[test]
    fn ds_kernel_examples() {
        let a = bag(&["cat"], &[2.0], &[&[1.0, 0.0]]);
        let b = bag(&["cat"], &[3.0], &[&[1.0, 0.0]]);
        assert_eq!(ds_kernel(&a, &b), 6.0);
        let c = bag(&["dog"], &[1.0], &[&[0.8, 0.6]]);
        let d = bag(&["cat"], &[1.0], &[&[1.0, 0.0]]);
        assert_relative_eq!(ds_kernel(&c, &d), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn one_item_gram() {
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let g = gram_rows(&KernelSpec::rbf(0.7).unwrap(), &x).unwrap();
        assert_eq!(g.values().as_slice(), &[1.0]);
    }

    #[test]
    fn median_heuristic_hits_exp_minus_one() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(median_pairwise_distance(&x), 2.0);
        match median_rbf(&x, true) {
            KernelSpec::Rbf { gamma, squared } => {
                assert!(squared);
                assert_eq!(gamma, 0.25);
            }
            _ => unreachable!(),
        }
    }

    proptest! {
        #[test]
        fn kernels_symmetric_and_rbf_bounded(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            gamma in 0.01f64..2.0,
        ) {
            for spec in [KernelSpec::rbf(gamma).unwrap(), KernelSpec::rbf_squared(gamma).unwrap(), KernelSpec::Linear] {
                let ab = eval_kernel(&spec, Item::Vector(&a), Item::Vector(&b)).unwrap();
                let ba = eval_kernel(&spec, Item::Vector(&b), Item::Vector(&a)).unwrap();
                prop_assert_eq!(ab.to_bits(), ba.to_bits());
                if !matches!(spec, KernelSpec::Linear) {
                    prop_assert!(ab > 0.0 && ab <= 1.0);
                }
            }
        }

        #[test]
        fn linear_gram_is_xxt(vals in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let x = DMatrix::from_row_slice(4, 3, &vals);
            let g = gram_rows(&KernelSpec::Linear, &x).unwrap();
            prop_assert!((g.values() - &x * x.transpose()).amax() <= 1e-12);
        }

        #[test]
        fn rbf_gram_psd(vals in proptest::collection::vec(-3.0f64..3.0, 10), gamma in 0.1f64..3.0) {
            let x = DMatrix::from_row_slice(5, 2, &vals);
            let g = gram_rows(&KernelSpec::rbf_squared(gamma).unwrap(), &x).unwrap();
            prop_assert!(linalg::min_eigenvalue(g.values()) >= -1e-8);
            prop_assert!(g.is_psd());
        }

        #[test]
        fn ds_kernel_bilinear_in_frequencies(f in 0.1f64..5.0, scale in -3.0f64..3.0) {
            let a = bag(&["a", "b"], &[f, 2.0], &[&[0.6, 0.8], &[1.0, 0.0]]);
            let b = bag(&["c"], &[3.0], &[&[0.0, 1.0]]);
            let lhs = ds_kernel(&a.scaled(scale), &b);
            prop_assert!((lhs - scale * ds_kernel(&a, &b)).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
