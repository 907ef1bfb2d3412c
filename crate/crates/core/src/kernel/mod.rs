//! Nadaraya-Watson estimation of conditional means and conditional
//! covariances of standardized residuals, plus cross-validated bandwidth
//! selection.

mod bandwidth;
mod model;

pub use bandwidth::{
    cv_loss, cv_losses, default_grid, make_folds, median_pairwise_distance, select_bandwidth,
    select_mean_bandwidth,
    select_from_table, BandwidthSearch, BandwidthSelection, CandidateLoss, CombineRule, LossKind,
    DEFAULT_FOLDS, DEFAULT_GRID_LEN, DEFAULT_PINV_TOL,
};
pub use model::{nw_correlation, nw_covariance, CovEstimate, KernelModel};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{accumulate_outer, sq_dist, SymMatrix};

/// Weight sums at or below this are treated as underflow.
pub const WEIGHT_FLOOR: f64 = 1e-300;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `exp(-x)` underflows to zero past this argument.
const EXP_UNDERFLOW: f64 = 745.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

impl KernelFamily {
    /// Scaled kernel `K_h(u) = K(u/h)/h`.
    #[inline]
    pub fn eval(self, u: f64, h: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => gaussian_kernel(u, h),
        }
    }

    /// Kernel value from the squared distance, skipping the square root.
    #[inline]
    fn eval_sq(self, u_sq: f64, h: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => {
                let arg = u_sq / (2.0 * h * h);
                if arg > EXP_UNDERFLOW {
                    0.0
                } else {
                    INV_SQRT_2PI / h * (-arg).exp()
                }
            }
        }
    }
}

#[inline]
pub fn gaussian_kernel(u: f64, h: f64) -> f64 {
    INV_SQRT_2PI / h * (-(u * u) / (2.0 * h * h)).exp()
}

/// Global scalar bandwidth, or one bandwidth per output pair `(j, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Global(f64),
    PerPair(SymMatrix),
}

impl Bandwidth {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            Bandwidth::Global(h) => check_bandwidth(*h),
            Bandwidth::PerPair(m) => {
                if m.dim() != p {
                    return Err(Error::DimensionMismatch {
                        what: "per-pair bandwidth matrix",
                        expected: p,
                        found: m.dim(),
                    });
                }
                m.packed().iter().try_for_each(|&h| check_bandwidth(h))
            }
        }
    }

    /// Distinct bandwidth values in use, sorted ascending.
    fn distinct(&self) -> Vec<f64> {
        match self {
            Bandwidth::Global(h) => vec![*h],
            Bandwidth::PerPair(m) => {
                let mut v = m.packed().to_vec();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        }
    }
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("bandwidth must be positive and finite, got {h}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn gaussian(h: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidth: Bandwidth::Global(h),
        }
    }
}

/// Normalized kernel weights `K_h(‖z_i − z‖) / Σ_l K_h(‖z_l − z‖)`.
pub(crate) fn normalized_weights(
    z_train: ArrayView2<'_, f64>,
    z: &[f64],
    h: f64,
    family: KernelFamily,
) -> Result<Vec<f64>> {
    if z.len() != z_train.ncols() {
        return Err(Error::DimensionMismatch {
            what: "query covariates",
            expected: z_train.ncols(),
            found: z.len(),
        });
    }
    // A single point is its own convex combination whatever the distance.
    if z_train.nrows() == 1 {
        return Ok(vec![1.0]);
    }
    let mut w: Vec<f64> = z_train
        .rows()
        .into_iter()
        .map(|zi| family.eval_sq(sq_dist(zi, z), h))
        .collect();
    let sum: f64 = w.iter().sum();
    if !(sum > WEIGHT_FLOOR) || !sum.is_finite() {
        return Err(Error::ZeroWeightSum);
    }
    for v in &mut w {
        *v /= sum;
    }
    Ok(w)
}

/// Conditional mean `Σ_i w_i(z) x_i` with a global bandwidth.
pub fn nw_mean(
    z_train: ArrayView2<'_, f64>,
    x_train: ArrayView2<'_, f64>,
    z: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    if z_train.nrows() != x_train.nrows() {
        return Err(Error::DimensionMismatch {
            what: "training rows",
            expected: z_train.nrows(),
            found: x_train.nrows(),
        });
    }
    let w = normalized_weights(z_train, z, h, KernelFamily::Gaussian)?;
    Ok(weighted_mean(&w, x_train))
}

pub(crate) fn weighted_mean(w: &[f64], x: ArrayView2<'_, f64>) -> Vec<f64> {
    let mut out = vec![0.0; x.ncols()];
    for (wi, xi) in w.iter().zip(x.rows()) {
        if *wi == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(xi) {
            *o += wi * v;
        }
    }
    out
}

/// `Σ_i w_i y_i y_iᵀ` for normalized weights `w`.
pub(crate) fn weighted_outer(w: &[f64], y: ArrayView2<'_, f64>) -> SymMatrix {
    let p = y.ncols();
    let mut out = SymMatrix::zeros(p);
    let mut buf = vec![0.0; p];
    for (wi, yi) in w.iter().zip(y.rows()) {
        if *wi == 0.0 {
            continue;
        }
        buf.iter_mut().zip(yi).for_each(|(b, v)| *b = *v);
        accumulate_outer(&mut out, &buf, *wi);
    }
    out
}

/// Conditional second-moment matrix `Σ_i w_i(z) y_i y_iᵀ`. With a per-pair
/// bandwidth, entry `(j, k)` uses weights computed from `h_{j,k}`.
pub fn nw_second_moment(
    z_train: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    z: &[f64],
    family: KernelFamily,
    bandwidth: &Bandwidth,
) -> Result<SymMatrix> {
    let p = y.ncols();
    bandwidth.validate(p)?;
    match bandwidth {
        Bandwidth::Global(h) => {
            let w = normalized_weights(z_train, z, *h, family)?;
            Ok(weighted_outer(&w, y))
        }
        Bandwidth::PerPair(hm) => {
            let mut out = SymMatrix::zeros(p);
            for h in bandwidth.distinct() {
                let w = normalized_weights(z_train, z, h, family)?;
                for j in 0..p {
                    for k in j..p {
                        if hm.get(j, k) != h {
                            continue;
                        }
                        let v: f64 = w
                            .iter()
                            .zip(y.rows())
                            .map(|(wi, yi)| wi * yi[j] * yi[k])
                            .sum();
                        out.set(j, k, v);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// [`weighted_mean`] over the subset `rows` of `x`; `w` is aligned with `rows`.
pub(crate) fn weighted_mean_rows(w: &[f64], x: ArrayView2<'_, f64>, rows: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.ncols()];
    for (wi, &r) in w.iter().zip(rows) {
        if *wi == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += wi * v;
        }
    }
    out
}

/// [`weighted_outer`] over the subset `rows` of `y`; `w` is aligned with `rows`.
pub(crate) fn weighted_outer_rows(w: &[f64], y: ArrayView2<'_, f64>, rows: &[usize]) -> SymMatrix {
    let p = y.ncols();
    let mut out = SymMatrix::zeros(p);
    let mut buf = vec![0.0; p];
    for (wi, &r) in w.iter().zip(rows) {
        if *wi == 0.0 {
            continue;
        }
        buf.iter_mut().zip(y.row(r)).for_each(|(b, v)| *b = *v);
        accumulate_outer(&mut out, &buf, *wi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_kernel_values() {
        assert!((gaussian_kernel(0.0, 1.0) - 0.398_942_280_4).abs() < 1e-10);
        assert!((gaussian_kernel(0.0, 2.0) - 0.199_471_140_2).abs() < 1e-10);
        assert_eq!(gaussian_kernel(0.0, 2.0), gaussian_kernel(0.0, 1.0) / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let u: f64 = rng.random_range(-10.0..10.0);
            let h: f64 = rng.random_range(0.01..5.0);
            assert_eq!(gaussian_kernel(u, h), gaussian_kernel(-u, h));
            assert!(gaussian_kernel(u, h) <= gaussian_kernel(0.0, h));
        }
    }

    #[test]
    fn single_point_mean_is_exact() {
        let z = array![[0.3, -1.2]];
        let x = array![[1.0 / 3.0, 7.77, -0.1]];
        for h in [1e-3, 0.7, 1e4] {
            let m = nw_mean(z.view(), x.view(), &[0.0, 0.0], h).unwrap();
            assert_eq!(m, x.row(0).to_vec());
        }
    }

    #[test]
    fn huge_bandwidth_gives_sample_mean() {
        let z = array![[0.0], [1.0], [3.0], [4.5]];
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.5, 4.0]];
        let m = nw_mean(z.view(), x.view(), &[2.0], 4.5e6).unwrap();
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        for (a, b) in m.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn mean_matches_explicit_loop() {
        let z = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let x = array![[1.0], [4.0], [-2.0]];
        let q: [f64; 2] = [0.2, 0.1];
        let h = 1.0;
        // Independent loop over the defining ratio.
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..3 {
            let d = ((z[[i, 0]] - q[0]).powi(2) + (z[[i, 1]] - q[1]).powi(2)).sqrt();
            let k = (-(d * d) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            num += k * x[[i, 0]];
            den += k;
        }
        let m = nw_mean(z.view(), x.view(), &q, h).unwrap();
        assert!((m[0] - num / den).abs() < 1e-12);
    }

    #[test]
    fn far_query_underflows() {
        let z = array![[0.0], [1.0]];
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            nw_mean(z.view(), x.view(), &[1e4], 0.1),
            Err(Error::ZeroWeightSum)
        ));
    }

    #[test]
    fn mean_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = Array2::from_shape_fn((40, 2), |_| rng.random_range(-3.0..3.0));
        let x = Array2::from_shape_fn((40, 3), |_| rng.random_range(-5.0..5.0));
        for _ in 0..50 {
            let q = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let h = rng.random_range(0.1..3.0);
            let m = nw_mean(z.view(), x.view(), &q, h).unwrap();
            for (j, v) in m.iter().enumerate() {
                let col = x.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
            let w = normalized_weights(z.view(), &q, h, KernelFamily::Gaussian).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn per_pair_entries_use_their_own_bandwidth() {
        let z = array![[0.0], [1.0], [2.5], [3.0]];
        let y = array![[1.0, 0.5], [-1.0, 2.0], [0.3, -0.7], [1.2, 1.1]];
        let hm = SymMatrix::from_packed(2, vec![0.5, 2.0, 1.0]).unwrap();
        let got =
            nw_second_moment(z.view(), y.view(), &[1.2], KernelFamily::Gaussian, &Bandwidth::PerPair(hm))
                .unwrap();
        for (j, k, h) in [(0, 0, 0.5), (0, 1, 2.0), (1, 1, 1.0)] {
            let global = nw_second_moment(
                z.view(),
                y.view(),
                &[1.2],
                KernelFamily::Gaussian,
                &Bandwidth::Global(h),
            )
            .unwrap();
            assert_eq!(got.get(j, k), global.get(j, k));
        }
    }

    #[test]
    fn rejects_bad_bandwidths() {
        assert!(Bandwidth::Global(0.0).validate(2).is_err());
        assert!(Bandwidth::Global(f64::NAN).validate(2).is_err());
        let hm = SymMatrix::from_packed(2, vec![1.0, -1.0, 1.0]).unwrap();
        assert!(Bandwidth::PerPair(hm).validate(2).is_err());
        assert!(Bandwidth::PerPair(SymMatrix::identity(3)).validate(2).is_err());
    }
}
