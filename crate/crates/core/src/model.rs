//! Shared domain types: dense matrices, factor pairs, observation sets and
//! solver reports, plus the norms and truncated SVD everything else uses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix, column-major storage, indexed `x[(i, j)]`.
pub type DenseMatrix = DMatrix<f64>;

pub fn ensure_finite(x: &DenseMatrix, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `sqrt(sum x_ij^2)`.
pub fn frobenius_norm(x: &DenseMatrix) -> f64 {
    x.norm()
}

/// Frobenius norm restricted to the observed index set.
pub fn masked_frobenius_norm(x: &DenseMatrix, omega: &ObservationSet) -> Result<f64> {
    omega.check_shape(x.shape())?;
    Ok(omega
        .indices()
        .iter()
        .map(|&(i, j)| x[(i, j)] * x[(i, j)])
        .sum::<f64>()
        .sqrt())
}

/// A rank-`r` factorization `X = U V^T` with `U` m×r and `V` n×r.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    u: DenseMatrix,
    v: DenseMatrix,
}

impl FactorPair {
    pub fn new(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::InvalidArgument(format!(
                "factor ranks differ: U has {} columns, V has {}",
                u.ncols(),
                v.ncols()
            )));
        }
        let r = u.ncols();
        if r == 0 || r > u.nrows().min(v.nrows()) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} outside 1..={}",
                u.nrows().min(v.nrows())
            )));
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn product(&self) -> DenseMatrix {
        &self.u * self.v.transpose()
    }

    pub fn into_parts(self) -> (DenseMatrix, DenseMatrix) {
        (self.u, self.v)
    }
}

/// Observed index set Ω with the observed values `b`.
///
/// Indices are kept in strictly increasing row-major lexicographic order, so
/// `values()[k]` always corresponds to `indices()[k]` and the layout of `b`
/// is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    rows: usize,
    cols: usize,
    indices: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl ObservationSet {
    /// Validating constructor. `indices` must already be strictly increasing.
    pub fn new(
        shape: (usize, usize),
        indices: Vec<(usize, usize)>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let (rows, cols) = shape;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!("empty shape {shape:?}")));
        }
        if indices.is_empty() {
            return Err(Error::EmptyObservation);
        }
        if indices.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: indices.len(),
                actual: values.len(),
            });
        }
        for &(i, j) in &indices {
            if i >= rows || j >= cols {
                return Err(Error::InvalidArgument(format!(
                    "index ({i}, {j}) outside {rows}x{cols}"
                )));
            }
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "indices must be strictly increasing (sorted, no duplicates)".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observed values"));
        }
        Ok(Self {
            rows,
            cols,
            indices,
            values,
        })
    }

    /// Reads the values at `indices` from `x`. Indices are sorted first;
    /// duplicates are rejected.
    pub fn from_matrix(x: &DenseMatrix, mut indices: Vec<(usize, usize)>) -> Result<Self> {
        indices.sort_unstable();
        for &(i, j) in &indices {
            if i >= x.nrows() || j >= x.ncols() {
                return Err(Error::InvalidArgument(format!(
                    "index ({i}, {j}) outside {}x{}",
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        let values = indices.iter().map(|&(i, j)| x[(i, j)]).collect();
        Self::new(x.shape(), indices, values)
    }

    /// Builds a set from unordered `(i, j, value)` triples.
    pub fn from_entries(
        shape: (usize, usize),
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let (indices, values) = entries.into_iter().map(|(i, j, v)| ((i, j), v)).unzip();
        Self::new(shape, indices, values)
    }

    /// Every entry of `x`.
    pub fn full(x: &DenseMatrix) -> Result<Self> {
        let indices = (0..x.nrows())
            .flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
            .collect();
        Self::from_matrix(x, indices)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// |Ω| / (m n).
    pub fn fraction(&self) -> f64 {
        self.len() as f64 / (self.rows * self.cols) as f64
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.indices.binary_search(&(i, j)).is_ok()
    }

    /// Same index set with the values replaced by those of `x`.
    pub fn with_values_from(&self, x: &DenseMatrix) -> Result<Self> {
        self.check_shape(x.shape())?;
        let values = self.indices.iter().map(|&(i, j)| x[(i, j)]).collect();
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub(crate) fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if shape != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: shape,
            });
        }
        Ok(())
    }
}

/// Outcome of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub estimate: DenseMatrix,
    pub outer_iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
    pub runtime_ms: f64,
}

/// `U diag(sigma) V^T` with orthonormal columns in `U`, `V` and `sigma`
/// nonincreasing.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DenseMatrix,
    pub sigma: DVector<f64>,
    pub v: DenseMatrix,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Thin SVD with singular values sorted in nonincreasing order.
/// nalgebra's default `svd` uses a loose stopping rule that can return a
/// visibly wrong factorization for nearly rank-deficient inputs, so every
/// decomposition here iterates to machine precision with no iteration cap.
fn full_svd(x: &DenseMatrix, vectors: bool) -> nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    x.clone()
        .try_svd(vectors, vectors, f64::EPSILON, 0)
        .expect("uncapped SVD iteration always returns")
}

pub(crate) fn sorted_svd(x: &DenseMatrix) -> TruncatedSvd {
    let svd = full_svd(x, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = u.select_columns(order.iter());
    let v = v_t.select_rows(order.iter()).transpose();
    let sigma = DVector::from_iterator(order.len(), order.iter().map(|&k| s[k]));
    TruncatedSvd { u, sigma, v }
}

/// Best rank-`k` approximation factors of `x`.
pub fn truncated_svd(x: &DenseMatrix, k: usize) -> Result<TruncatedSvd> {
    let max_k = x.nrows().min(x.ncols());
    if k == 0 || k > max_k {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {k} outside 1..={max_k}"
        )));
    }
    let full = sorted_svd(x);
    Ok(TruncatedSvd {
        u: full.u.columns(0, k).into_owned(),
        sigma: full.sigma.rows(0, k).into_owned(),
        v: full.v.columns(0, k).into_owned(),
    })
}

/// Singular values only, nonincreasing.
pub fn singular_values(x: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = full_svd(x, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn frobenius_small_cases() {
        assert_eq!(frobenius_norm(&DenseMatrix::zeros(2, 2)), 0.0);
        let x = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]);
        assert!((frobenius_norm(&x) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn frobenius_matches_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 10, 10);
        let mut acc = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                acc += x[(i, j)].powi(2);
            }
        }
        let oracle = acc.sqrt();
        assert!((frobenius_norm(&x) - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn masked_norm_cases() {
        let x = DenseMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 5.0, 5.0]);
        let full = ObservationSet::full(&x).unwrap();
        assert!((masked_frobenius_norm(&x, &full).unwrap() - frobenius_norm(&x)).abs() < 1e-12);
        let single = ObservationSet::from_matrix(&x, vec![(0, 0)]).unwrap();
        assert_eq!(masked_frobenius_norm(&x, &single).unwrap(), 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_matrix(&mut rng, 7, 9);
        let idx: Vec<_> = (0..7)
            .flat_map(|i| (0..9).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(0.4))
            .collect();
        let omega = ObservationSet::from_matrix(&y, idx.clone()).unwrap();
        let oracle = idx
            .iter()
            .map(|&(i, j)| y[(i, j)].powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((masked_frobenius_norm(&y, &omega).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn masked_norm_rejects_shape_mismatch() {
        let x = DenseMatrix::zeros(2, 3);
        let omega = ObservationSet::from_matrix(&DenseMatrix::zeros(3, 3), vec![(0, 0)]).unwrap();
        assert!(matches!(
            masked_frobenius_norm(&x, &omega),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn observation_set_invariants() {
        assert!(matches!(
            ObservationSet::new((2, 2), vec![], vec![]),
            Err(Error::EmptyObservation)
        ));
        assert!(ObservationSet::new((2, 2), vec![(0, 1), (0, 0)], vec![1.0, 2.0]).is_err());
        assert!(ObservationSet::new((2, 2), vec![(0, 1), (0, 1)], vec![1.0, 2.0]).is_err());
        assert!(ObservationSet::new((2, 2), vec![(2, 0)], vec![1.0]).is_err());
        assert!(ObservationSet::new((2, 2), vec![(0, 0)], vec![1.0, 2.0]).is_err());
        assert!(ObservationSet::new((2, 2), vec![(0, 0)], vec![f64::NAN]).is_err());
        let x = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let o = ObservationSet::from_matrix(&x, vec![(1, 0), (0, 1)]).unwrap();
        assert_eq!(o.indices(), &[(0, 1), (1, 0)]);
        assert_eq!(o.values(), &[2.0, 3.0]);
        assert!(ObservationSet::from_matrix(&x, vec![(1, 0), (1, 0)]).is_err());
    }

    #[test]
    fn factor_pair_rank_checks() {
        assert!(FactorPair::new(DenseMatrix::zeros(4, 2), DenseMatrix::zeros(3, 1)).is_err());
        assert!(FactorPair::new(DenseMatrix::zeros(2, 3), DenseMatrix::zeros(5, 3)).is_err());
        let f = FactorPair::new(DenseMatrix::zeros(4, 2), DenseMatrix::zeros(3, 2)).unwrap();
        assert_eq!(f.rank(), 2);
        assert_eq!(f.product().shape(), (4, 3));
    }

    #[test]
    fn truncated_svd_diagonal() {
        let x = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let t = truncated_svd(&x, 1).unwrap();
        assert!((t.sigma[0] - 3.0).abs() < 1e-14);
        let rec = t.reconstruct();
        let expect = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        assert!((rec - expect).norm() < 1e-14);
    }

    #[test]
    fn truncated_svd_rank_bounds() {
        let x = DenseMatrix::zeros(3, 4);
        assert!(truncated_svd(&x, 0).is_err());
        assert!(truncated_svd(&x, 4).is_err());
        assert!(truncated_svd(&x, 3).is_ok());
    }

    #[test]
    fn svd_accurate_on_nearly_rank_one_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let u = random_matrix(&mut rng, 100, 1);
            let v = random_matrix(&mut rng, 100, 1);
            let x = &u * v.transpose() * 40.0 + random_matrix(&mut rng, 100, 100) * 1e-13;
            let t = truncated_svd(&x, 1).unwrap();
            assert!((t.reconstruct() - &x).norm() <= 1e-10 * x.norm());
            assert!((t.sigma[0] - singular_values(&x)[0]).abs() <= 1e-10 * t.sigma[0]);
        }
    }

    #[test]
    fn truncated_svd_exact_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_matrix(&mut rng, 12, 3);
        let v = random_matrix(&mut rng, 9, 3);
        let x = &u * v.transpose();
        let t = truncated_svd(&x, 3).unwrap();
        assert!((t.reconstruct() - &x).norm() <= 1e-10 * x.norm());
    }

    /// Eckart-Young: the optimal rank-k error is the root of the tail sum of
    /// squared singular values. The oracle uses the eigenvalues of X^T X.
    #[test]
    fn truncated_svd_matches_eckart_young() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 8, 6);
        let gram = x.transpose() * &x;
        let mut eig: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let oracle = eig[3..].iter().map(|e| e.max(0.0)).sum::<f64>().sqrt();
        let t = truncated_svd(&x, 3).unwrap();
        let err = (t.reconstruct() - &x).norm();
        assert!((err - oracle).abs() < 1e-10, "{err} vs {oracle}");
        for k in 1..3 {
            assert!(t.sigma[k] <= t.sigma[k - 1]);
        }
        let eye = DenseMatrix::identity(3, 3);
        assert!((t.u.transpose() * &t.u - &eye).abs().max() < 1e-10);
        assert!((t.v.transpose() * &t.v - &eye).abs().max() < 1e-10);
    }

    mod props {
        use super::super::{frobenius_norm, masked_frobenius_norm, truncated_svd};
        use super::{ChaCha8Rng, DenseMatrix, ObservationSet};
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};

        fn matrix_strategy() -> impl Strategy<Value = DenseMatrix> {
            (1usize..7, 1usize..7).prop_flat_map(|(m, n)| {
                proptest::collection::vec(-10.0f64..10.0, m * n)
                    .prop_map(move |v| DenseMatrix::from_vec(m, n, v))
            })
        }

        proptest! {
            #[test]
            fn frobenius_is_absolutely_homogeneous(x in matrix_strategy(), c in -50.0f64..50.0) {
                let lhs = frobenius_norm(&(&x * c));
                let rhs = c.abs() * frobenius_norm(&x);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
            }

            #[test]
            fn masked_norm_bounded_by_full(x in matrix_strategy(), seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx: Vec<_> = (0..x.nrows())
                    .flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
                    .filter(|_| rng.random_bool(0.5))
                    .collect();
                if idx.is_empty() {
                    idx.push((0, 0));
                }
                let omega = ObservationSet::from_matrix(&x, idx).unwrap();
                prop_assert!(masked_frobenius_norm(&x, &omega).unwrap() <= frobenius_norm(&x) + 1e-12);
            }

            #[test]
            fn truncated_svd_orthonormal(x in matrix_strategy(), kf in 0.0f64..1.0) {
                let kmax = x.nrows().min(x.ncols());
                let k = 1 + ((kf * kmax as f64) as usize).min(kmax - 1);
                let t = truncated_svd(&x, k).unwrap();
                let eye = DenseMatrix::identity(k, k);
                prop_assert!((t.u.transpose() * &t.u - &eye).abs().max() < 1e-10);
                prop_assert!((t.v.transpose() * &t.v - &eye).abs().max() < 1e-10);
                for w in t.sigma.as_slice().windows(2) {
                    prop_assert!(w[1] <= w[0]);
                }
            }
        }
    }
}
