use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Aligned observation table: covariates `z_i` (n×q) and outputs `x_i` (n×p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    covariates: Array2<f64>,
    outputs: Array2<f64>,
    timestamps: Option<Vec<i64>>,
    covariate_names: Vec<String>,
    output_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        covariates: Array2<f64>,
        outputs: Array2<f64>,
        timestamps: Option<Vec<i64>>,
        covariate_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if outputs.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "output rows",
                expected: n,
                found: outputs.nrows(),
            });
        }
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, found: n });
        }
        if covariates.ncols() == 0 || outputs.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one covariate and one output"));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch {
                what: "covariate names",
                expected: covariates.ncols(),
                found: covariate_names.len(),
            });
        }
        if output_names.len() != outputs.ncols() {
            return Err(Error::DimensionMismatch {
                what: "output names",
                expected: outputs.ncols(),
                found: output_names.len(),
            });
        }
        if let Some(pos) = covariates
            .iter()
            .chain(outputs.iter())
            .position(|v| !v.is_finite())
        {
            return Err(Error::invalid(format!("non-finite value at flat position {pos}")));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "timestamps",
                    expected: n,
                    found: ts.len(),
                });
            }
            if let Some(i) = ts.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::NonMonotoneTimestamps { line: i + 1 });
            }
        }
        Ok(Dataset {
            covariates,
            outputs,
            timestamps,
            covariate_names,
            output_names,
        })
    }

    /// Dataset with generated names `z1..zq` and `x1..xp`.
    pub fn from_arrays(covariates: Array2<f64>, outputs: Array2<f64>) -> Result<Self> {
        let q = covariates.ncols();
        let p = outputs.ncols();
        Self::new(
            covariates,
            outputs,
            None,
            (1..=q).map(|k| format!("z{k}")).collect(),
            (1..=p).map(|j| format!("x{j}")).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn q(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn p(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn outputs(&self) -> ArrayView2<'_, f64> {
        self.outputs.view()
    }

    pub fn z(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    pub fn x(&self, i: usize) -> ArrayView1<'_, f64> {
        self.outputs.row(i)
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    /// Keeps only the listed covariate columns, in the given order.
    pub fn select_covariates(&self, columns: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.q()) {
            return Err(Error::invalid(format!("covariate index {bad} out of range")));
        }
        Dataset::new(
            self.covariates.select(Axis(1), columns),
            self.outputs.clone(),
            self.timestamps.clone(),
            columns.iter().map(|&c| self.covariate_names[c].clone()).collect(),
            self.output_names.clone(),
        )
    }

    /// Per-column (min, max) of the covariates.
    pub fn covariate_ranges(&self) -> Vec<(f64, f64)> {
        self.covariates
            .columns()
            .into_iter()
            .map(|c| {
                c.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect()
    }

    /// SHA-256 over shape, names, timestamps and the little-endian bytes of
    /// every value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for dim in [self.n(), self.q(), self.p()] {
            h.update((dim as u64).to_le_bytes());
        }
        for name in self.covariate_names.iter().chain(&self.output_names) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        if let Some(ts) = &self.timestamps {
            for t in ts {
                h.update(t.to_le_bytes());
            }
        }
        for v in self.covariates.iter().chain(self.outputs.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn value(&self, i: usize) -> f64 {
        if self.count == 1 {
            return self.min;
        }
        let t = i as f64 / (self.count - 1) as f64;
        self.min + t * (self.max - self.min)
    }
}

/// Covariate query locations; rectangular grids keep their axis descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrid {
    points: Array2<f64>,
    axes: Option<Vec<GridAxis>>,
}

impl QueryGrid {
    pub fn from_points(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::invalid("query grid must contain at least one point"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query grid contains non-finite values"));
        }
        Ok(QueryGrid { points, axes: None })
    }

    /// Cartesian product of the axes; the first axis varies slowest.
    pub fn rectangular(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.count == 0) {
            return Err(Error::invalid("rectangular grid needs non-empty axes"));
        }
        if axes.iter().any(|a| !(a.min <= a.max) || !a.min.is_finite() || !a.max.is_finite()) {
            return Err(Error::invalid("grid axis bounds must be finite and ordered"));
        }
        let m: usize = axes.iter().map(|a| a.count).product();
        let q = axes.len();
        let mut points = Array2::zeros((m, q));
        for (row, mut out) in points.rows_mut().into_iter().enumerate() {
            let mut rem = row;
            for k in (0..q).rev() {
                out[k] = axes[k].value(rem % axes[k].count);
                rem /= axes[k].count;
            }
        }
        Ok(QueryGrid {
            points,
            axes: Some(axes),
        })
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn axes(&self) -> Option<&[GridAxis]> {
        self.axes.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn q(&self) -> usize {
        self.points.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_bad_shapes() {
        let z = array![[0.0], [1.0]];
        assert!(Dataset::from_arrays(z.clone(), array![[1.0]]).is_err());
        assert!(matches!(
            Dataset::from_arrays(array![[0.0]], array![[1.0]]),
            Err(Error::TooFewRows { .. })
        ));
        assert!(Dataset::from_arrays(z.clone(), array![[1.0], [f64::NAN]]).is_err());
        let err = Dataset::new(
            z,
            array![[1.0], [2.0]],
            Some(vec![5, 5]),
            vec!["a".into()],
            vec!["b".into()],
        );
        assert!(matches!(err, Err(Error::NonMonotoneTimestamps { .. })));
    }

    #[test]
    fn fingerprint_tracks_values() {
        let a = Dataset::from_arrays(array![[0.0], [1.0]], array![[1.0], [2.0]]).unwrap();
        let b = Dataset::from_arrays(array![[0.0], [1.0]], array![[1.0], [2.5]]).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn rectangular_grid_reproduces_axes() {
        let g = QueryGrid::rectangular(vec![
            GridAxis { min: 0.0, max: 1.0, count: 3 },
            GridAxis { min: 10.0, max: 20.0, count: 2 },
        ])
        .unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.points().row(0).to_vec(), vec![0.0, 10.0]);
        assert_eq!(g.points().row(1).to_vec(), vec![0.0, 20.0]);
        assert_eq!(g.points().row(5).to_vec(), vec![1.0, 20.0]);
        let axes = g.axes().unwrap();
        for (row, pt) in g.points().rows().into_iter().enumerate() {
            assert_eq!(pt[0], axes[0].value(row / 2));
            assert_eq!(pt[1], axes[1].value(row % 2));
        }
    }
}
