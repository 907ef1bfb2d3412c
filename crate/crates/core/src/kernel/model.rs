use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nw_second_moment, normalized_weights, weighted_mean, KernelSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cov_to_corr, SymMatrix};

/// A conditional covariance (or correlation) estimate. `per_pair` marks
/// estimates built entry-wise from per-pair bandwidths, which are not
/// guaranteed to be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub matrix: SymMatrix,
    pub per_pair: bool,
}

/// Fitted Nadaraya-Watson state: standardized residuals
/// `y_ij = (x_ij − m̂_j(z_i)) / σ̂_j` plus everything needed to answer queries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelModel {
    training: Dataset,
    sigma_hat: Vec<f64>,
    fitted_mean: Array2<f64>,
    residuals: Array2<f64>,
    mean_bandwidth: f64,
    spec: KernelSpec,
    /// Per-covariate divisors applied before distances, when enabled.
    covariate_scale: Option<Vec<f64>>,
    #[serde(skip)]
    metric_covariates: Option<Array2<f64>>,
}

impl KernelModel {
    pub fn fit(data: &Dataset, mean_bandwidth: f64, spec: KernelSpec) -> Result<Self> {
        Self::fit_with(data, mean_bandwidth, spec, false)
    }

    /// Like [`KernelModel::fit`], optionally dividing each covariate by its
    /// empirical standard deviation before computing distances.
    pub fn fit_with(
        data: &Dataset,
        mean_bandwidth: f64,
        spec: KernelSpec,
        standardize_covariates: bool,
    ) -> Result<Self> {
        super::check_bandwidth(mean_bandwidth)?;
        spec.bandwidth.validate(data.p())?;

        let outputs = data.outputs();
        let sigma_hat = column_sds(outputs)
            .into_iter()
            .enumerate()
            .map(|(j, sd)| {
                let col = outputs.column(j);
                let constant = col.iter().all(|&v| v == col[0]);
                if constant || !(sd > 0.0) {
                    Err(Error::DegenerateColumn { column: j })
                } else {
                    Ok(sd)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let covariate_scale = if standardize_covariates {
            let sds = column_sds(data.covariates());
            if let Some(k) = sds.iter().position(|s| !(*s > 0.0)) {
                return Err(Error::invalid(format!(
                    "covariate {k} is constant and cannot be standardized"
                )));
            }
            Some(sds)
        } else {
            None
        };

        let mut model = KernelModel {
            training: data.clone(),
            sigma_hat,
            fitted_mean: Array2::zeros((data.n(), data.p())),
            residuals: Array2::zeros((data.n(), data.p())),
            mean_bandwidth,
            spec,
            covariate_scale,
            metric_covariates: None,
        };
        model.rebuild_metric();

        let zt = model.metric_view();
        let x = data.outputs();
        let means: Vec<Vec<f64>> = (0..data.n())
            .into_par_iter()
            .map(|i| {
                let zi: Vec<f64> = zt.row(i).to_vec();
                let w = normalized_weights(zt, &zi, mean_bandwidth, model.spec.family)?;
                Ok(weighted_mean(&w, x))
            })
            .collect::<Result<_>>()?;

        for (i, m) in means.iter().enumerate() {
            for j in 0..data.p() {
                model.fitted_mean[[i, j]] = m[j];
                model.residuals[[i, j]] = (x[[i, j]] - m[j]) / model.sigma_hat[j];
            }
        }
        Ok(model)
    }

    fn rebuild_metric(&mut self) {
        self.metric_covariates = self.covariate_scale.as_ref().map(|s| {
            let mut z = self.training.covariates().to_owned();
            for (mut col, sd) in z.axis_iter_mut(Axis(1)).zip(s) {
                col.mapv_inplace(|v| v / sd);
            }
            z
        });
    }

    /// Restores derived state after deserialization.
    pub fn restore(mut self) -> Self {
        self.rebuild_metric();
        self
    }

    fn metric_view(&self) -> ArrayView2<'_, f64> {
        match &self.metric_covariates {
            Some(z) => z.view(),
            None => self.training.covariates(),
        }
    }

    fn metric_query(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.training.q() {
            return Err(Error::DimensionMismatch {
                what: "query covariates",
                expected: self.training.q(),
                found: z.len(),
            });
        }
        Ok(match &self.covariate_scale {
            Some(s) => z.iter().zip(s).map(|(v, sd)| v / sd).collect(),
            None => z.to_vec(),
        })
    }

    pub fn training(&self) -> &Dataset {
        &self.training
    }

    pub fn sigma_hat(&self) -> &[f64] {
        &self.sigma_hat
    }

    pub fn residuals(&self) -> ArrayView2<'_, f64> {
        self.residuals.view()
    }

    pub fn fitted_mean(&self) -> ArrayView2<'_, f64> {
        self.fitted_mean.view()
    }

    pub fn mean_bandwidth(&self) -> f64 {
        self.mean_bandwidth
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn covariate_scale(&self) -> Option<&[f64]> {
        self.covariate_scale.as_deref()
    }

    pub fn p(&self) -> usize {
        self.training.p()
    }

    pub fn q(&self) -> usize {
        self.training.q()
    }

    /// Normalized kernel weights of the training points at `z`, using the
    /// mean bandwidth.
    pub fn weights(&self, z: &[f64]) -> Result<Vec<f64>> {
        let zq = self.metric_query(z)?;
        normalized_weights(self.metric_view(), &zq, self.mean_bandwidth, self.spec.family)
    }

    pub fn mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights(z)?;
        Ok(weighted_mean(&w, self.training.outputs()))
    }

    /// Conditional covariance of the standardized residuals at `z`.
    pub fn covariance(&self, z: &[f64]) -> Result<CovEstimate> {
        let zq = self.metric_query(z)?;
        let matrix = nw_second_moment(
            self.metric_view(),
            self.residuals.view(),
            &zq,
            self.spec.family,
            &self.spec.bandwidth,
        )?;
        Ok(CovEstimate {
            matrix,
            per_pair: matches!(self.spec.bandwidth, super::Bandwidth::PerPair(_)),
        })
    }

    pub fn correlation(&self, z: &[f64]) -> Result<CovEstimate> {
        let est = self.covariance(z)?;
        Ok(CovEstimate {
            matrix: cov_to_corr(&est.matrix)?,
            per_pair: est.per_pair,
        })
    }

    /// Maps a covariance of standardized residuals back to output units.
    pub fn to_output_scale(&self, s: &SymMatrix) -> SymMatrix {
        s.congruence_diag(&self.sigma_hat)
    }
}

pub fn nw_covariance(model: &KernelModel, z: &[f64]) -> Result<CovEstimate> {
    model.covariance(z)
}

pub fn nw_correlation(model: &KernelModel, z: &[f64]) -> Result<CovEstimate> {
    model.correlation(z)
}

/// Empirical standard deviation per column, divisor `n − 1`.
pub(crate) fn column_sds(a: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = a.nrows() as f64;
    a.columns()
        .into_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let ss: f64 = c.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Bandwidth;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(seed: u64, n: usize, q: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array2::from_shape_fn((n, q), |_| rng.random_range(-2.0..2.0));
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        Dataset::from_arrays(z, x).unwrap()
    }

    #[test]
    fn constant_column_is_degenerate() {
        let d = Dataset::from_arrays(
            array![[0.0], [1.0], [2.0]],
            array![[1.0, 0.1], [2.0, 0.1], [3.0, 0.1]],
        )
        .unwrap();
        assert!(matches!(
            KernelModel::fit(&d, 1.0, KernelSpec::gaussian(1.0)),
            Err(Error::DegenerateColumn { column: 1 })
        ));
    }

    #[test]
    fn residuals_round_trip() {
        let d = random_dataset(3, 60, 2, 3);
        let m = KernelModel::fit(&d, 0.6, KernelSpec::gaussian(0.6)).unwrap();
        for i in 0..d.n() {
            for j in 0..d.p() {
                let back = m.residuals()[[i, j]] * m.sigma_hat()[j] + m.fitted_mean()[[i, j]];
                assert!((back - d.outputs()[[i, j]]).abs() < 1e-10);
            }
            let direct = m.mean(&d.z(i).to_vec()).unwrap();
            for j in 0..d.p() {
                assert_eq!(direct[j], m.fitted_mean()[[i, j]]);
            }
        }
    }

    #[test]
    fn huge_mean_bandwidth_gives_z_scores() {
        let d = random_dataset(4, 30, 2, 2);
        let m = KernelModel::fit(&d, 1e7, KernelSpec::gaussian(1.0)).unwrap();
        let x = d.outputs();
        for j in 0..2 {
            let col = x.column(j);
            let mean = col.sum() / 30.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 29.0).sqrt();
            for i in 0..30 {
                let z = (x[[i, j]] - mean) / sd;
                assert!((m.residuals()[[i, j]] - z).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn correlation_has_unit_diagonal_and_flag() {
        let d = random_dataset(5, 40, 2, 3);
        let m = KernelModel::fit(&d, 0.8, KernelSpec::gaussian(0.8)).unwrap();
        let c = m.correlation(&[0.1, -0.3]).unwrap();
        assert!(!c.per_pair);
        for j in 0..3 {
            assert_eq!(c.matrix.get(j, j), 1.0);
        }
        let hm = SymMatrix::from_upper_fn(3, |j, k| 0.5 + 0.1 * (j + k) as f64);
        let spec = KernelSpec {
            family: Default::default(),
            bandwidth: Bandwidth::PerPair(hm),
        };
        let m2 = KernelModel::fit(&d, 0.8, spec).unwrap();
        assert!(m2.covariance(&[0.0, 0.0]).unwrap().per_pair);
    }

    #[test]
    fn standardized_covariates_change_the_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Array2::from_shape_fn((50, 2), |(_, k)| {
            rng.random_range(0.0..1.0) * if k == 0 { 1.0 } else { 100.0 }
        });
        let x = Array2::from_shape_fn((50, 2), |_| rng.random_range(-1.0..1.0));
        let d = Dataset::from_arrays(z, x).unwrap();
        let raw = KernelModel::fit_with(&d, 0.3, KernelSpec::gaussian(0.3), false).unwrap();
        let std = KernelModel::fit_with(&d, 0.3, KernelSpec::gaussian(0.3), true).unwrap();
        assert!(raw.covariate_scale().is_none());
        assert_eq!(std.covariate_scale().unwrap().len(), 2);
        let a = raw.covariance(&[0.5, 50.0]).unwrap().matrix;
        let b = std.covariance(&[0.5, 50.0]).unwrap().matrix;
        assert!(a.max_abs_diff(&b) > 1e-6);

        let json = serde_json::to_string(&std).unwrap();
        let back: KernelModel = serde_json::from_str::<KernelModel>(&json).unwrap().restore();
        assert_eq!(back.covariance(&[0.5, 50.0]).unwrap().matrix, b);
    }

    #[test]
    fn query_dimension_checked() {
        let d = random_dataset(6, 10, 2, 2);
        let m = KernelModel::fit(&d, 1.0, KernelSpec::gaussian(1.0)).unwrap();
        assert!(matches!(
            m.covariance(&[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
