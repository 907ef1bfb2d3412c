//! K-fold cross-validated bandwidth selection for the covariance smoother.
//!
//! Two held-out losses are tabulated for every candidate bandwidth:
//!
//! * Frobenius: `‖y_i y_iᵀ − Σ̂₋(z_i; h)‖²_F`
//! * Trace: `tr(Σ̂₋(z_i; h)† y_i y_iᵀ)`
//!
//! where `Σ̂₋` is fitted on the training folds only. The final bandwidth is
//! picked by one of the [`CombineRule`]s. Folds are contiguous blocks in row
//! order, which is time order whenever the dataset carries timestamps; the
//! outputs are serially correlated, so shuffled folds would leak.
//!
//! The residuals `y_i` come from a single pilot mean fit, so every candidate
//! is scored against the same targets. The pilot bandwidth is either given or
//! picked by the same blocked CV applied to the conditional mean.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{column_sds, KernelModel};
use super::{
    check_bandwidth, weighted_mean_rows, weighted_outer_rows, KernelFamily, KernelSpec, WEIGHT_FLOOR,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::sq_dist;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GRID_LEN: usize = 25;
pub const DEFAULT_PINV_TOL: f64 = 1e-8;
const GRID_LOW: f64 = 0.05;
const GRID_HIGH: f64 = 2.0;
/// Rows used when estimating the median pairwise distance.
const MEDIAN_SUBSAMPLE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Frobenius,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    FrobeniusOnly,
    TraceOnly,
    #[default]
    GeomMeanOfMinimizers,
    MinimizerOfGeomMeanLoss,
}

impl CombineRule {
    pub fn as_str(self) -> &'static str {
        match self {
            CombineRule::FrobeniusOnly => "frobenius-only",
            CombineRule::TraceOnly => "trace-only",
            CombineRule::GeomMeanOfMinimizers => "geom-mean-of-minimizers",
            CombineRule::MinimizerOfGeomMeanLoss => "minimizer-of-geom-mean-loss",
        }
    }
}

impl fmt::Display for CombineRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombineRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            CombineRule::FrobeniusOnly,
            CombineRule::TraceOnly,
            CombineRule::GeomMeanOfMinimizers,
            CombineRule::MinimizerOfGeomMeanLoss,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown combine rule '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSearch {
    /// Strictly increasing candidate bandwidths.
    pub grid: Vec<f64>,
    pub folds: usize,
    pub combine: CombineRule,
    /// Relative singular-value cutoff for the pseudoinverse in the trace loss.
    pub pseudoinverse_tol: f64,
    /// Pilot bandwidth for the residuals; cross-validated when `None`.
    pub mean_bandwidth: Option<f64>,
    pub standardize_covariates: bool,
}

impl BandwidthSearch {
    /// Default search: 25 log-spaced candidates over `[0.05, 2]` times the
    /// median pairwise covariate distance, 5 blocked folds.
    pub fn for_data(data: &Dataset) -> Result<Self> {
        Self::for_data_with(data, false)
    }

    /// Default search on covariates optionally divided by their standard
    /// deviations; the grid is scaled to match.
    pub fn for_data_with(data: &Dataset, standardize_covariates: bool) -> Result<Self> {
        let z = metric_covariates(data, standardize_covariates)?;
        Ok(BandwidthSearch {
            grid: default_grid(z.view())?,
            folds: DEFAULT_FOLDS,
            combine: CombineRule::default(),
            pseudoinverse_tol: DEFAULT_PINV_TOL,
            mean_bandwidth: None,
            standardize_covariates,
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("bandwidth grid is empty"));
        }
        self.grid.iter().try_for_each(|&h| check_bandwidth(h))?;
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("bandwidth grid must be strictly increasing"));
        }
        if self.folds < 2 || self.folds > n {
            return Err(Error::invalid(format!(
                "fold count {} must lie in [2, {n}]",
                self.folds
            )));
        }
        if !(self.pseudoinverse_tol >= 0.0) {
            return Err(Error::invalid("pseudoinverse tolerance must be non-negative"));
        }
        if let Some(h) = self.mean_bandwidth {
            check_bandwidth(h)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateLoss {
    pub bandwidth: f64,
    pub frobenius: f64,
    pub trace: f64,
}

impl CandidateLoss {
    pub fn geometric_mean(&self) -> f64 {
        (self.frobenius * self.trace).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub bandwidth: f64,
    pub rule: CombineRule,
    pub frobenius_minimizer: Option<f64>,
    pub trace_minimizer: Option<f64>,
    pub geom_loss_minimizer: Option<f64>,
    /// Pilot bandwidth behind the residuals, when the table came from data.
    pub mean_bandwidth: Option<f64>,
    pub table: Vec<CandidateLoss>,
}

/// Contiguous, near-equal blocks of row indices.
pub fn make_folds(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..k)
        .map(|f| (f * n / k..(f + 1) * n / k).collect())
        .filter(|v: &Vec<usize>| !v.is_empty())
        .collect()
}

pub fn median_pairwise_distance(z: ArrayView2<'_, f64>) -> f64 {
    let n = z.nrows();
    let stride = n.div_ceil(MEDIAN_SUBSAMPLE).max(1);
    let rows: Vec<usize> = (0..n).step_by(stride).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        let zi = z.row(i).to_vec();
        for &j in &rows[a + 1..] {
            d.push(sq_dist(z.row(j), &zi).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

pub fn default_grid(z: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let md = median_pairwise_distance(z);
    if !(md > 0.0) {
        return Err(Error::invalid("covariates have zero median pairwise distance"));
    }
    let (lo, hi) = ((GRID_LOW * md).ln(), (GRID_HIGH * md).ln());
    let g = DEFAULT_GRID_LEN;
    Ok((0..g)
        .map(|i| (lo + (hi - lo) * i as f64 / (g - 1) as f64).exp())
        .collect())
}

fn metric_covariates(data: &Dataset, standardize: bool) -> Result<Array2<f64>> {
    let mut z = data.covariates().to_owned();
    if standardize {
        let sds = column_sds(data.covariates());
        for (mut col, sd) in z.axis_iter_mut(Axis(1)).zip(sds) {
            if !(sd > 0.0) {
                return Err(Error::invalid("constant covariate cannot be standardized"));
            }
            col.mapv_inplace(|v| v / sd);
        }
    }
    Ok(z)
}

fn complement(n: usize, held: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    held.iter().for_each(|&i| mask[i] = false);
    (0..n).filter(|&i| mask[i]).collect()
}

/// Runs `per_point(i, d²_to_training, training_rows)` for every held-out row
/// and returns the per-candidate loss vectors indexed by row.
fn for_each_held_out<F>(
    z: ArrayView2<'_, f64>,
    folds: &[Vec<usize>],
    per_point: F,
) -> Vec<Vec<f64>>
where
    F: Fn(usize, &[f64], &[usize]) -> Vec<f64> + Sync,
{
    let n = z.nrows();
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); n];
    for held in folds {
        let train = complement(n, held);
        let ztrain = z.select(Axis(0), &train);
        let losses: Vec<Vec<f64>> = held
            .par_iter()
            .map(|&i| {
                let zi = z.row(i).to_vec();
                let d2: Vec<f64> = ztrain.rows().into_iter().map(|r| sq_dist(r, &zi)).collect();
                per_point(i, &d2, &train)
            })
            .collect();
        for (&i, l) in held.iter().zip(losses) {
            out[i] = l;
        }
    }
    out
}

fn weights_from_sq(d2: &[f64], h: f64, family: KernelFamily) -> Option<Vec<f64>> {
    let mut w: Vec<f64> = d2.iter().map(|&u| family.eval_sq(u, h)).collect();
    let s: f64 = w.iter().sum();
    if !(s > WEIGHT_FLOOR) || !s.is_finite() {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= s);
    Some(w)
}

/// Both held-out losses for every candidate. Per-point contributions are
/// summed in row order, so the totals do not depend on fold enumeration.
pub fn cv_losses(
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    folds: &[Vec<usize>],
    grid: &[f64],
    pseudoinverse_tol: f64,
) -> Result<Vec<CandidateLoss>> {
    if z.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            what: "residual rows",
            expected: z.nrows(),
            found: y.nrows(),
        });
    }
    grid.iter().try_for_each(|&h| check_bandwidth(h))?;
    let family = KernelFamily::Gaussian;
    let g = grid.len();
    let p = y.ncols();

    let per_point = for_each_held_out(z, folds, |i, d2, train| {
        let yi = y.row(i).to_vec();
        let mut out = vec![f64::INFINITY; 2 * g];
        for (c, &h) in grid.iter().enumerate() {
            let Some(w) = weights_from_sq(d2, h, family) else {
                continue;
            };
            let s = weighted_outer_rows(&w, y, train);
            let mut frob = 0.0;
            for j in 0..p {
                for k in 0..p {
                    let r = yi[j] * yi[k] - s.get(j, k);
                    frob += r * r;
                }
            }
            out[2 * c] = frob;
            out[2 * c + 1] = s.pseudo_inverse(pseudoinverse_tol).quadratic_form(&yi);
        }
        out
    });

    Ok(grid
        .iter()
        .enumerate()
        .map(|(c, &h)| {
            let mut frob = 0.0;
            let mut trace = 0.0;
            for l in per_point.iter().filter(|l| !l.is_empty()) {
                frob += l[2 * c];
                trace += l[2 * c + 1];
            }
            CandidateLoss {
                bandwidth: h,
                frobenius: frob,
                trace,
            }
        })
        .collect())
}

/// One held-out loss at a single bandwidth; `+∞` when any held-out point
/// receives zero total weight.
pub fn cv_loss(
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    folds: &[Vec<usize>],
    h: f64,
    kind: LossKind,
    pseudoinverse_tol: f64,
) -> Result<f64> {
    let row = cv_losses(z, y, folds, &[h], pseudoinverse_tol)?[0];
    Ok(match kind {
        LossKind::Frobenius => row.frobenius,
        LossKind::Trace => row.trace,
    })
}

/// Held-out squared error of the conditional mean, each output scaled by its
/// marginal standard deviation.
fn mean_cv_losses(
    z: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    sigma: &[f64],
    folds: &[Vec<usize>],
    grid: &[f64],
) -> Vec<f64> {
    let family = KernelFamily::Gaussian;
    let per_point = for_each_held_out(z, folds, |i, d2, train| {
        grid.iter()
            .map(|&h| match weights_from_sq(d2, h, family) {
                None => f64::INFINITY,
                Some(w) => weighted_mean_rows(&w, x, train)
                    .iter()
                    .zip(x.row(i))
                    .zip(sigma)
                    .map(|((m, v), s)| ((v - m) / s).powi(2))
                    .sum(),
            })
            .collect()
    });
    (0..grid.len())
        .map(|c| per_point.iter().filter(|l| !l.is_empty()).map(|l| l[c]).sum())
        .collect()
}

/// Smallest-bandwidth argmin over finite values.
fn argmin(table: &[CandidateLoss], loss: impl Fn(&CandidateLoss) -> f64) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for row in table {
        let v = loss(row);
        if !v.is_finite() {
            continue;
        }
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((row.bandwidth, v)),
        }
    }
    best.map(|(h, _)| h)
}

/// Applies a combination rule to a precomputed loss table.
pub fn select_from_table(table: &[CandidateLoss], rule: CombineRule) -> Result<BandwidthSelection> {
    let mut sorted = table.to_vec();
    sorted.sort_by(|a, b| a.bandwidth.total_cmp(&b.bandwidth));
    let h1 = argmin(&sorted, |r| r.frobenius);
    let h2 = argmin(&sorted, |r| r.trace);
    let hg = argmin(&sorted, CandidateLoss::geometric_mean);
    let chosen = match rule {
        CombineRule::FrobeniusOnly => h1,
        CombineRule::TraceOnly => h2,
        CombineRule::GeomMeanOfMinimizers => h1.zip(h2).map(|(a, b)| (a * b).sqrt()),
        CombineRule::MinimizerOfGeomMeanLoss => hg,
    };
    let bandwidth = chosen.ok_or(Error::AllCandidatesInfeasible)?;
    Ok(BandwidthSelection {
        bandwidth,
        rule,
        frobenius_minimizer: h1,
        trace_minimizer: h2,
        geom_loss_minimizer: hg,
        mean_bandwidth: None,
        table: sorted,
    })
}

/// Pilot bandwidth for the conditional mean: blocked CV of the standardized
/// squared prediction error over the search grid, unless fixed in `search`.
pub fn select_mean_bandwidth(data: &Dataset, search: &BandwidthSearch) -> Result<f64> {
    search.validate(data.n())?;
    if let Some(h) = search.mean_bandwidth {
        return Ok(h);
    }
    let z = metric_covariates(data, search.standardize_covariates)?;
    let folds = make_folds(data.n(), search.folds);
    let sigma = column_sds(data.outputs());
    let losses = mean_cv_losses(z.view(), data.outputs(), &sigma, &folds, &search.grid);
    let table: Vec<CandidateLoss> = search
        .grid
        .iter()
        .zip(&losses)
        .map(|(&h, &l)| CandidateLoss {
            bandwidth: h,
            frobenius: l,
            trace: l,
        })
        .collect();
    argmin(&table, |r| r.frobenius).ok_or(Error::AllCandidatesInfeasible)
}

pub fn select_bandwidth(data: &Dataset, search: &BandwidthSearch) -> Result<BandwidthSelection> {
    search.validate(data.n())?;
    let z = metric_covariates(data, search.standardize_covariates)?;
    let folds = make_folds(data.n(), search.folds);
    let mean_bandwidth = select_mean_bandwidth(data, search)?;

    let pilot = KernelModel::fit_with(
        data,
        mean_bandwidth,
        KernelSpec::gaussian(mean_bandwidth),
        search.standardize_covariates,
    )?;
    let table = cv_losses(
        z.view(),
        pilot.residuals(),
        &folds,
        &search.grid,
        search.pseudoinverse_tol,
    )?;
    let mut sel = select_from_table(&table, search.combine)?;
    sel.mean_bandwidth = Some(mean_bandwidth);
    Ok(sel)
}
