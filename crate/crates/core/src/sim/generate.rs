use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{CovariateSpec, NoiseSpec, SimConfig, TruthSurfaces};
use crate::error::{Error, Result};

pub const HOURS_PER_DAY: usize = 24;
pub const DAYS_PER_YEAR: usize = 365;

#[derive(Debug, Clone, PartialEq)]
pub struct SimCovariates {
    /// `n × k` matrix, one column per covariate spec.
    pub z: Array2<f64>,
    /// Day of year in `1..=365` per row.
    pub day: Vec<usize>,
    /// Hour in `1..=24` per row.
    pub hour: Vec<usize>,
    /// Daily amplitudes, `days × k`.
    pub zeta: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutputs {
    pub x: Array2<f64>,
    /// True `[σ1², σ12, σ2²]` per row.
    pub cov: Vec<[f64; 3]>,
    /// The AR(1) noise component `δ`, `n × 2`.
    pub noise: Array2<f64>,
}

impl SimOutputs {
    pub fn cov12(&self) -> Vec<f64> {
        self.cov.iter().map(|c| c[1]).collect()
    }
}

/// One replication: covariates `z1..z4`, outputs and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub covariates: SimCovariates,
    pub outputs: SimOutputs,
}

pub fn covariate_value(spec: &CovariateSpec, day: usize, hour: usize, zeta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    spec.amplitude * ((day as f64 - spec.phase_day) * TAU / DAYS_PER_YEAR as f64).sin()
        - zeta * (PI * hour as f64 / 12.0 + 0.3).sin()
        + spec.offset
}

/// Row `i` is day `i / 24 + 1` (wrapping after 365 days), hour `i % 24 + 1`.
/// One `ζ` per day and covariate, drawn day by day in covariate order.
pub fn gen_covariates<R: Rng + ?Sized>(
    specs: &[CovariateSpec],
    n_hours: usize,
    rng: &mut R,
) -> SimCovariates {
    let k = specs.len();
    let days = n_hours.div_ceil(HOURS_PER_DAY);
    let mut zeta = Array2::zeros((days, k));
    for d in 0..days {
        let day = d % DAYS_PER_YEAR + 1;
        for (c, spec) in specs.iter().enumerate() {
            let (a, b) = spec.zeta.bounds(day);
            zeta[[d, c]] = if b > a { rng.random_range(a..b) } else { a };
        }
    }
    let mut z = Array2::zeros((n_hours, k));
    let mut day = Vec::with_capacity(n_hours);
    let mut hour = Vec::with_capacity(n_hours);
    for i in 0..n_hours {
        let d = i / HOURS_PER_DAY;
        let dd = d % DAYS_PER_YEAR + 1;
        let h = i % HOURS_PER_DAY + 1;
        for (c, spec) in specs.iter().enumerate() {
            z[[i, c]] = covariate_value(spec, dd, h, zeta[[d, c]]);
        }
        day.push(dd);
        hour.push(h);
    }
    SimCovariates { z, day, hour, zeta }
}

/// Stationary AR(1) with marginal variance `nu_sq`.
pub fn ar1_series<R: Rng + ?Sized>(n: usize, phi: f64, nu_sq: f64, rng: &mut R) -> Vec<f64> {
    let innov = (nu_sq * (1.0 - phi * phi)).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut prev = 0.0;
    for t in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        prev = if t == 0 { nu_sq.sqrt() * e } else { phi * prev + innov * e };
        out.push(prev);
    }
    out
}

/// Lower Cholesky factor `[l11, l21, l22]` of `[[v1, c], [c, v2]]`.
fn chol2(v1: f64, c: f64, v2: f64, row: usize) -> Result<[f64; 3]> {
    let scale = v1.abs().max(v2.abs()).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    if v1 < -tol || v2 < -tol {
        return Err(Error::CholeskyFailure { row });
    }
    if v1 <= tol {
        if c.abs() > tol {
            return Err(Error::CholeskyFailure { row });
        }
        return Ok([0.0, 0.0, v2.max(0.0).sqrt()]);
    }
    let l11 = v1.sqrt();
    let l21 = c / l11;
    let rem = v2 - l21 * l21;
    if rem < -tol {
        return Err(Error::CholeskyFailure { row });
    }
    Ok([l11, l21, rem.max(0.0).sqrt()])
}

/// `x_i = u_i + δ_i` with `u_i ~ N(m(z_i), Σ(z_i))` independent across rows
/// and `δ_·j` an AR(1) series per output. All latent draws come first, then
/// the two noise series.
pub fn gen_outputs<R: Rng + ?Sized>(
    z12: ArrayView2<'_, f64>,
    truth: &TruthSurfaces,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<SimOutputs> {
    if z12.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            what: "relevant covariates",
            expected: 2,
            found: z12.ncols(),
        });
    }
    let n = z12.nrows();
    let mut x = Array2::zeros((n, 2));
    let mut cov = Vec::with_capacity(n);
    for i in 0..n {
        let z = [z12[[i, 0]], z12[[i, 1]]];
        let m = truth.mean(z);
        let s = truth.cov(z);
        let [l11, l21, l22] = chol2(s[0], s[1], s[2], i)?;
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = m[0] + l11 * e1;
        x[[i, 1]] = m[1] + l21 * e1 + l22 * e2;
        cov.push(s);
    }
    let mut delta = Array2::zeros((n, 2));
    for j in 0..2 {
        for (i, d) in ar1_series(n, noise.phi, noise.nu_sq[j], rng).into_iter().enumerate() {
            x[[i, j]] += d;
            delta[[i, j]] = d;
        }
    }
    Ok(SimOutputs { x, cov, noise: delta })
}

/// RNG for replication `rep`: the master seed keyed, one stream per replication.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

pub fn simulate_replication(config: &SimConfig, rep: usize) -> Result<SimData> {
    let mut rng = replication_rng(config.seed, rep);
    let covariates = gen_covariates(&config.covariates, config.n_hours, &mut rng);
    let outputs = gen_outputs(
        covariates.z.slice(ndarray::s![.., 0..2]),
        &config.truth,
        &config.noise,
        &mut rng,
    )?;
    Ok(SimData {
        covariates,
        outputs,
    })
}
