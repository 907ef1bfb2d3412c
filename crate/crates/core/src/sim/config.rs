use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::kernel::CombineRule;

/// `intercept + coef · (z1, z2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSurface {
    pub intercept: f64,
    pub coef: [f64; 2],
}

impl LinearSurface {
    pub fn eval(&self, z: [f64; 2]) -> f64 {
        self.intercept + self.coef[0] * z[0] + self.coef[1] * z[1]
    }
}

/// `base + amplitude · logistic((center − (z1 + z2)/2) / scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticSurface {
    pub base: f64,
    pub amplitude: f64,
    pub center: f64,
    pub scale: f64,
}

impl LogisticSurface {
    pub fn eval(&self, z: [f64; 2]) -> f64 {
        let t = (self.center - 0.5 * (z[0] + z[1])) / self.scale;
        self.base + self.amplitude * logistic(t)
    }
}

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Ground-truth mean and covariance as functions of the two relevant
/// covariates. `σ12 = ρ · σ1 · σ2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSurfaces {
    pub mu1: LinearSurface,
    pub mu2: LinearSurface,
    pub var1: LogisticSurface,
    pub var2: LogisticSurface,
    pub rho: LogisticSurface,
}

impl Default for TruthSurfaces {
    fn default() -> Self {
        TruthSurfaces {
            mu1: LinearSurface {
                intercept: 14.0,
                coef: [-0.02, -0.01],
            },
            mu2: LinearSurface {
                intercept: 12.0,
                coef: [-0.015, -0.005],
            },
            var1: LogisticSurface {
                base: 0.05,
                amplitude: 0.04,
                center: 15.0,
                scale: 5.0,
            },
            var2: LogisticSurface {
                base: 0.04,
                amplitude: 0.03,
                center: 15.0,
                scale: 5.0,
            },
            rho: LogisticSurface {
                base: 0.0,
                amplitude: 0.8,
                center: 10.0,
                scale: 4.0,
            },
        }
    }
}

impl TruthSurfaces {
    pub fn mean(&self, z: [f64; 2]) -> [f64; 2] {
        [self.mu1.eval(z), self.mu2.eval(z)]
    }

    /// `[σ1², σ12, σ2²]`.
    pub fn cov(&self, z: [f64; 2]) -> [f64; 3] {
        let v1 = self.var1.eval(z);
        let v2 = self.var2.eval(z);
        let c = self.rho.eval(z) * v1.max(0.0).sqrt() * v2.max(0.0).sqrt();
        [v1, c, v2]
    }

    pub fn cov12(&self, z: [f64; 2]) -> f64 {
        self.cov(z)[1]
    }

    /// Checks positive semidefiniteness on a dense grid over the given box.
    pub fn check_psd(&self, lo: [f64; 2], hi: [f64; 2], steps: usize) -> Result<()> {
        let steps = steps.max(2);
        for a in 0..steps {
            for b in 0..steps {
                let t = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (steps - 1) as f64;
                let z = [t(0, a), t(1, b)];
                let [v1, c, v2] = self.cov(z);
                let r = self.rho.eval(z);
                if !(v1 >= 0.0 && v2 >= 0.0 && r.abs() <= 1.0 && v1 * v2 - c * c >= -1e-15) {
                    return Err(Error::invalid(format!(
                        "truth covariance is not positive semidefinite at z = ({}, {})",
                        z[0], z[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// AR(1) coefficient.
    pub phi: f64,
    /// Marginal noise variances `ν_j²`.
    pub nu_sq: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            phi: 0.8,
            nu_sq: [0.02, 0.017],
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi.abs() < 1.0) {
            return Err(Error::invalid(format!("AR(1) coefficient {} outside (-1, 1)", self.phi)));
        }
        if self.nu_sq.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise variances must be positive"));
        }
        Ok(())
    }

    pub fn innovation_var(&self, j: usize) -> f64 {
        self.nu_sq[j] * (1.0 - self.phi * self.phi)
    }
}

/// Daily amplitude `ζ_d ~ U(a(d), a(d) + span)` with
/// `a(d) = a_min + (a_max − a_min) · (1 + sin((d − 141)·2π/365)) / 2`,
/// so warm days vary more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaInterval {
    pub a_min: f64,
    pub a_max: f64,
    pub span: f64,
}

impl ZetaInterval {
    pub fn bounds(&self, day: usize) -> (f64, f64) {
        let w = 0.5 * (1.0 + ((day as f64 - 141.0) * std::f64::consts::TAU / 365.0).sin());
        let a = self.a_min + (self.a_max - self.a_min) * w;
        (a, a + self.span)
    }

    pub fn max_abs(&self) -> f64 {
        self.a_min.abs().max(self.a_max.abs() + self.span)
    }
}

/// `amplitude · sin((d − phase_day)·2π/365) − ζ_d · sin(πη/12 + 0.3) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub amplitude: f64,
    pub phase_day: f64,
    pub offset: f64,
    pub zeta: ZetaInterval,
}

impl CovariateSpec {
    /// Closed interval every generated value lies in.
    pub fn bounds(&self) -> (f64, f64) {
        let r = self.amplitude.abs() + self.zeta.max_abs();
        (self.offset - r, self.offset + r)
    }
}

pub fn default_covariates() -> Vec<CovariateSpec> {
    let c = |amplitude, phase_day, offset, a_min, a_max, span| CovariateSpec {
        amplitude,
        phase_day,
        offset,
        zeta: ZetaInterval { a_min, a_max, span },
    };
    vec![
        c(12.0, 141.0, 9.5, 1.0, 5.0, 3.0),
        c(11.0, 150.0, 7.5, 1.0, 4.0, 3.0),
        c(3.0, 270.0, 85.0, 0.5, 2.0, 1.0),
        c(5.5, 360.0, 5.5, 0.5, 3.0, 1.5),
    ]
}

/// NW covariance bandwidth in the benchmark: a number or `"cv"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NwBandwidth {
    Fixed(f64),
    CrossValidated,
}

impl Serialize for NwBandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NwBandwidth::Fixed(h) => s.serialize_f64(*h),
            NwBandwidth::CrossValidated => s.serialize_str("cv"),
        }
    }
}

impl<'de> Deserialize<'de> for NwBandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::F(h) => Ok(NwBandwidth::Fixed(h)),
            Raw::S(s) if s == "cv" => Ok(NwBandwidth::CrossValidated),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "expected a bandwidth or \"cv\", got {s:?}"
            ))),
        }
    }
}

fn default_h() -> f64 {
    1.9
}

fn default_nw_bandwidth() -> NwBandwidth {
    NwBandwidth::Fixed(1.9)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NwSettings {
    #[serde(default = "default_nw_bandwidth")]
    pub bandwidth: NwBandwidth,
    /// Bandwidth of the conditional-mean smoother shared by both methods.
    #[serde(default = "default_h")]
    pub mean_bandwidth: f64,
    /// Rule used when `bandwidth = "cv"`.
    #[serde(default)]
    pub combine: CombineRule,
}

impl Default for NwSettings {
    fn default() -> Self {
        NwSettings {
            bandwidth: default_nw_bandwidth(),
            mean_bandwidth: default_h(),
            combine: CombineRule::default(),
        }
    }
}

fn default_n_hours() -> usize {
    8760
}

fn default_q_values() -> Vec<usize> {
    vec![2, 3, 4]
}

fn default_replications() -> usize {
    50
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_n_hours")]
    pub n_hours: usize,
    /// Covariate counts to benchmark; `q` uses `z1..z_q`.
    #[serde(default = "default_q_values")]
    pub q_values: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub nw: NwSettings,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub truth: TruthSurfaces,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_covariates")]
    pub covariates: Vec<CovariateSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_hours: default_n_hours(),
            q_values: default_q_values(),
            replications: default_replications(),
            seed: default_seed(),
            nw: NwSettings::default(),
            forest: ForestConfig::default(),
            truth: TruthSurfaces::default(),
            noise: NoiseSpec::default(),
            covariates: default_covariates(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: SimConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hours < 2 {
            return Err(Error::invalid("n_hours must be at least 2"));
        }
        if self.q_values.is_empty() || self.q_values.iter().any(|q| !(2..=4).contains(q)) {
            return Err(Error::invalid("q_values must be drawn from {2, 3, 4}"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be positive"));
        }
        if self.covariates.len() != 4 {
            return Err(Error::DimensionMismatch {
                what: "covariate specs",
                expected: 4,
                found: self.covariates.len(),
            });
        }
        if let NwBandwidth::Fixed(h) = self.nw.bandwidth {
            crate::kernel::check_bandwidth(h)?;
        }
        crate::kernel::check_bandwidth(self.nw.mean_bandwidth)?;
        self.forest.resolve(2, 4)?;
        self.noise.validate()?;
        let (l1, h1) = self.covariates[0].bounds();
        let (l2, h2) = self.covariates[1].bounds();
        self.truth.check_psd([l1, l2], [h1, h2], 101)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = SimConfig::default();
        c.validate().unwrap();
        let s = c.to_toml().unwrap();
        assert_eq!(SimConfig::from_toml_str(&s).unwrap(), c);
        assert_eq!(SimConfig::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn partial_config_and_cv_bandwidth() {
        let c = SimConfig::from_toml_str(
            "replications = 3\nq_values = [2]\n[nw]\nbandwidth = \"cv\"\n[forest]\nn_trees = 7\n",
        )
        .unwrap();
        assert_eq!(c.nw.bandwidth, NwBandwidth::CrossValidated);
        assert_eq!(c.forest.n_trees, 7);
        assert_eq!(c.noise, NoiseSpec::default());
        assert!(SimConfig::from_toml_str("q_values = [5]").is_err());
        assert!(SimConfig::from_toml_str("bogus = 1").is_err());
        assert!(SimConfig::from_toml_str("[noise]\nphi = 1.0\nnu_sq = [0.1, 0.1]").is_err());
    }

    #[test]
    fn truth_matches_closed_form() {
        let t = TruthSurfaces::default();
        let z = [3.0, -1.0];
        let m = 1.0;
        let s = 1.0 / (1.0 + (-(15.0 - m) / 5.0f64).exp());
        let r = 0.8 / (1.0 + (-(10.0 - m) / 4.0f64).exp());
        let v1 = 0.05 + 0.04 * s;
        let v2 = 0.04 + 0.03 * s;
        let [a, c, b] = t.cov(z);
        assert!((a - v1).abs() < 1e-15 && (b - v2).abs() < 1e-15);
        assert!((c - r * (v1 * v2).sqrt()).abs() < 1e-15);
        assert!((t.mean(z)[0] - (14.0 - 0.06 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn bad_truth_is_rejected() {
        let mut t = TruthSurfaces::default();
        t.rho.amplitude = 1.5;
        assert!(t.check_psd([-10.0, -10.0], [30.0, 30.0], 50).is_err());
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!((logistic(2.0) + logistic(-2.0) - 1.0).abs() < 1e-15);
    }
}
