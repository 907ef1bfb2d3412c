//! Dense symmetric matrices and the small set of covariance utilities shared
//! by both estimators.
//!
//! [`SymMatrix`] stores only the upper triangle (diagonal included), so
//! `get(j, k) == get(k, j)` holds by construction rather than by convention.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for PSD checks, scaled by the largest diagonal entry.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Correlations that overshoot ±1 by less than this are treated as round-off
/// and clamped; larger violations are reported as-is.
const CORR_ROUNDOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

#[inline]
fn packed_index(dim: usize, j: usize, k: usize) -> usize {
    let (r, c) = if j <= k { (j, k) } else { (k, j) };
    r * (2 * dim - r + 1) / 2 + (c - r)
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "SymMatrix dimension must be positive");
        SymMatrix {
            dim,
            upper: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for j in 0..dim {
            m.set(j, j, 1.0);
        }
        m
    }

    /// Builds a matrix from `f(j, k)` evaluated on the upper triangle only.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for j in 0..dim {
            for k in j..dim {
                upper.push(f(j, k));
            }
        }
        SymMatrix { dim, upper }
    }

    /// Builds from packed upper-triangular storage, row by row.
    pub fn from_packed(dim: usize, upper: Vec<f64>) -> Result<Self> {
        let expected = dim * (dim + 1) / 2;
        if dim == 0 || upper.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "packed symmetric storage",
                expected,
                found: upper.len(),
            });
        }
        Ok(SymMatrix { dim, upper })
    }

    /// Builds from a square dense matrix, rejecting asymmetry beyond `tol`.
    pub fn from_dense(m: ArrayView2<'_, f64>, tol: f64) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c || r == 0 {
            return Err(Error::DimensionMismatch {
                what: "square matrix",
                expected: r,
                found: c,
            });
        }
        for j in 0..r {
            for k in (j + 1)..r {
                if (m[[j, k]] - m[[k, j]]).abs() > tol {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({j}, {k})"
                    )));
                }
            }
        }
        Ok(Self::from_upper_fn(r, |j, k| m[[j, k]]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.upper[packed_index(self.dim, j, k)]
    }

    #[inline]
    pub fn set(&mut self, j: usize, k: usize, value: f64) {
        let idx = packed_index(self.dim, j, k);
        self.upper[idx] = value;
    }

    /// Upper triangle including the diagonal, row-major.
    pub fn packed(&self) -> &[f64] {
        &self.upper
    }

    pub(crate) fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.upper
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.get(j, j)).collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.dim, self.dim), |(j, k)| self.get(j, k))
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |j, k| self.get(j, k))
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|v| v * c).collect(),
        }
    }

    /// `D S D` with `D = diag(d)`.
    pub fn congruence_diag(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.dim);
        Self::from_upper_fn(self.dim, |j, k| self.get(j, k) * d[j] * d[k])
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_nalgebra())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `true` iff the smallest eigenvalue is at least `-tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// PSD check with tolerance `PSD_REL_TOL * max_j S_jj`.
    pub fn is_psd_relative(&self) -> bool {
        let scale = self.diagonal().into_iter().fold(0.0_f64, f64::max);
        self.is_psd(PSD_REL_TOL * scale)
    }

    /// Moore-Penrose pseudoinverse via the symmetric eigendecomposition.
    /// Eigenvalues with `|λ| < rel_cutoff * max|λ|` are treated as zero.
    pub fn pseudo_inverse(&self, rel_cutoff: f64) -> Self {
        let eig = SymmetricEigen::new(self.to_nalgebra());
        let largest = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let cutoff = rel_cutoff * largest;
        let p = self.dim;
        let mut out = Self::zeros(p);
        if largest == 0.0 {
            return out;
        }
        for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda.abs() <= cutoff {
                continue;
            }
            let v = eig.eigenvectors.column(idx);
            let inv = 1.0 / lambda;
            for j in 0..p {
                for k in j..p {
                    let cur = out.get(j, k);
                    out.set(j, k, cur + inv * v[j] * v[k]);
                }
            }
        }
        out
    }

    /// `tr(self * u uᵀ) = uᵀ self u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.dim {
            acc += self.get(j, j) * u[j] * u[j];
            for k in (j + 1)..self.dim {
                acc += 2.0 * self.get(j, k) * u[j] * u[k];
            }
        }
        acc
    }

    /// Euclidean distance between the upper-triangular parts of two matrices.
    pub fn upper_distance(&self, other: &SymMatrix, include_diagonal: bool) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut acc = 0.0;
        for j in 0..self.dim {
            let start = if include_diagonal { j } else { j + 1 };
            for k in start..self.dim {
                let d = self.get(j, k) - other.get(j, k);
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.upper
            .iter()
            .zip(&other.upper)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

pub fn euclidean_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "distance operands",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Correlation matrix `S_jk / sqrt(S_jj S_kk)` with an exact unit diagonal.
pub fn cov_to_corr(s: &SymMatrix) -> Result<SymMatrix> {
    let p = s.dim();
    let mut sd = Vec::with_capacity(p);
    for j in 0..p {
        let v = s.get(j, j);
        if !(v > 0.0) {
            return Err(Error::NonPositiveDiagonal { index: j, value: v });
        }
        sd.push(v.sqrt());
    }
    Ok(SymMatrix::from_upper_fn(p, |j, k| {
        if j == k {
            return 1.0;
        }
        let r = s.get(j, k) / (sd[j] * sd[k]);
        if r.abs() > 1.0 && r.abs() - 1.0 <= CORR_ROUNDOFF {
            r.signum()
        } else {
            r
        }
    }))
}

/// Mean-centred sample covariance with divisor `k - 1`.
pub fn sample_cov(y: ArrayView2<'_, f64>) -> Result<SymMatrix> {
    let rows: Vec<usize> = (0..y.nrows()).collect();
    sample_cov_rows(y, &rows)
}

/// Sample covariance over a multiset of row indices of `y`.
pub fn sample_cov_rows(y: ArrayView2<'_, f64>, rows: &[usize]) -> Result<SymMatrix> {
    let k = rows.len();
    if k < 2 {
        return Err(Error::TooFewRows { needed: 2, found: k });
    }
    let p = y.ncols();
    let mut mean = vec![0.0; p];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(y.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    let mut out = SymMatrix::zeros(p);
    let mut centred = vec![0.0; p];
    for &i in rows {
        for (c, (v, m)) in centred.iter_mut().zip(y.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        accumulate_outer(&mut out, &centred, 1.0);
    }
    let denom = (k - 1) as f64;
    for v in out.packed_mut() {
        *v /= denom;
    }
    Ok(out)
}

/// `out += w * u uᵀ` on the packed upper triangle.
#[inline]
pub(crate) fn accumulate_outer(out: &mut SymMatrix, u: &[f64], w: f64) {
    let p = u.len();
    let mut idx = 0;
    let data = out.packed_mut();
    for j in 0..p {
        let wu = w * u[j];
        for k in j..p {
            data[idx] += wu * u[k];
            idx += 1;
        }
    }
}

/// Squared Euclidean distance between two equal-length views.
#[inline]
pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn textbook_cov(y: &Array2<f64>) -> Array2<f64> {
        // E[(y - ȳ)(y - ȳ)ᵀ] with k - 1, written element by element.
        let (k, p) = y.dim();
        let mut out = Array2::zeros((p, p));
        for a in 0..p {
            for b in 0..p {
                let ma = y.column(a).sum() / k as f64;
                let mb = y.column(b).sum() / k as f64;
                let s: f64 = (0..k).map(|i| (y[[i, a]] - ma) * (y[[i, b]] - mb)).sum();
                out[[a, b]] = s / (k as f64 - 1.0);
            }
        }
        out
    }

    #[test]
    fn packed_layout_is_symmetric() {
        let m = SymMatrix::from_upper_fn(4, |j, k| (10 * j + k) as f64);
        for j in 0..4 {
            for k in 0..4 {
                assert_eq!(m.get(j, k), m.get(k, j));
            }
        }
        assert_eq!(m.get(1, 3), 13.0);
        assert_eq!(m.get(3, 3), 33.0);
        assert_eq!(m.packed().len(), 10);
    }

    #[test]
    fn corr_examples() {
        let id = SymMatrix::identity(2);
        assert_eq!(cov_to_corr(&id).unwrap(), id);

        let rank1 = SymMatrix::from_dense(array![[4.0, 2.0], [2.0, 1.0]].view(), 0.0).unwrap();
        let r = cov_to_corr(&rank1).unwrap();
        assert_eq!(r.get(0, 1), 1.0);
        assert_eq!(r.get(0, 0), 1.0);
        assert_eq!(r.get(1, 1), 1.0);

        let neg = SymMatrix::from_dense(array![[2.0, -1.0], [-1.0, 2.0]].view(), 0.0).unwrap();
        assert!((cov_to_corr(&neg).unwrap().get(0, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn corr_rejects_degenerate_variance() {
        let m = SymMatrix::from_packed(2, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            cov_to_corr(&m),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
    }

    #[test]
    fn distances() {
        assert_eq!(euclidean_dist(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(euclidean_dist(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_dist(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(
            euclidean_dist(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sample_cov_examples() {
        let same = array![[1.5, -2.0], [1.5, -2.0]];
        assert!(sample_cov(same.view()).unwrap().packed().iter().all(|&v| v == 0.0));

        let two = array![[0.0, 0.0], [2.0, 2.0]];
        let s = sample_cov(two.view()).unwrap();
        assert_eq!(s.to_dense(), array![[2.0, 2.0], [2.0, 2.0]]);

        assert!(matches!(
            sample_cov(array![[1.0, 2.0]].view()),
            Err(Error::TooFewRows { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn pseudo_inverse_of_identity_and_singular() {
        let id = SymMatrix::identity(3);
        assert!(id.pseudo_inverse(1e-8).max_abs_diff(&id) < 1e-14);

        // [[1,1],[1,1]] has pinv [[.25,.25],[.25,.25]].
        let ones = SymMatrix::from_packed(2, vec![1.0, 1.0, 1.0]).unwrap();
        let pinv = ones.pseudo_inverse(1e-8);
        for &v in pinv.packed() {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    fn matrix_strategy() -> impl Strategy<Value = Array2<f64>> {
        (2usize..=50, 1usize..=8).prop_flat_map(|(k, p)| {
            proptest::collection::vec(-10.0f64..10.0, k * p)
                .prop_map(move |v| Array2::from_shape_vec((k, p), v).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn sample_cov_is_psd_and_correlations_bounded(y in matrix_strategy()) {
            let s = sample_cov(y.view()).unwrap();
            prop_assert!(s.min_eigenvalue() >= -1e-10);
            if s.diagonal().iter().all(|&d| d > 0.0) {
                let r = cov_to_corr(&s).unwrap();
                for &v in r.packed() {
                    prop_assert!((-1.0 - 1e-10..=1.0 + 1e-10).contains(&v));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn sample_cov_matches_textbook_formula(y in matrix_strategy()) {
            let s = sample_cov(y.view()).unwrap();
            let t = textbook_cov(&y);
            for a in 0..y.ncols() {
                for b in 0..y.ncols() {
                    let scale = 1.0 + t[[a, b]].abs();
                    prop_assert!((s.get(a, b) - t[[a, b]]).abs() <= 1e-12 * scale);
                }
            }
        }

        #[test]
        fn correlation_is_scale_invariant(y in matrix_strategy(), c in 0.01f64..100.0) {
            let s = sample_cov(y.view()).unwrap();
            prop_assume!(s.diagonal().iter().all(|&d| d > 1e-8));
            let r1 = cov_to_corr(&s).unwrap();
            let r2 = cov_to_corr(&s.scaled(c)).unwrap();
            prop_assert!(r1.max_abs_diff(&r2) < 1e-12);
        }
    }
}
