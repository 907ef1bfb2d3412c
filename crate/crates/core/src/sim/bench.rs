use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{NwBandwidth, SimConfig};
use super::generate::{replication_rng, simulate_replication};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig};
use crate::kernel::{
    nw_second_moment, select_bandwidth, Bandwidth, BandwidthSearch, CombineRule, KernelFamily,
    KernelModel, KernelSpec,
};

pub const BENCH_FORMAT: &str = "condcov-bench";
pub const BENCH_FORMAT_VERSION: u32 = 1;

/// `√(mean((est − truth)²))`.
pub fn rmse_cov12(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate count",
            expected: truth.len(),
            found: estimates.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("rmse of an empty sample"));
    }
    let ss: f64 = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Everything an estimator sees for one (replication, q) cell.
pub struct BenchCell<'a> {
    /// Covariates `z1..z_q` and the two outputs.
    pub data: &'a Dataset,
    /// Mean-smoothed standardized residuals shared by both methods.
    pub model: &'a KernelModel,
    pub truth_cov12: &'a [f64],
    pub replication: usize,
    pub q: usize,
    /// Seed reserved for this cell.
    pub seed: u64,
}

/// Produces `σ̂12(z_i)` in output units at every observed covariate row.
pub trait Cov12Estimator: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, cell: &BenchCell<'_>) -> Result<Vec<f64>>;
}

pub struct NwEstimator {
    pub bandwidth: NwBandwidth,
    pub combine: CombineRule,
}

impl Cov12Estimator for NwEstimator {
    fn name(&self) -> &str {
        "nw"
    }

    fn estimate(&self, cell: &BenchCell<'_>) -> Result<Vec<f64>> {
        let h = match self.bandwidth {
            NwBandwidth::Fixed(h) => h,
            NwBandwidth::CrossValidated => {
                let mut search = BandwidthSearch::for_data(cell.data)?;
                search.mean_bandwidth = Some(cell.model.mean_bandwidth());
                search.combine = self.combine;
                select_bandwidth(cell.data, &search)?.bandwidth
            }
        };
        let z = cell.data.covariates();
        let y = cell.model.residuals();
        let s = cell.model.sigma_hat();
        let bw = Bandwidth::Global(h);
        (0..cell.data.n())
            .into_par_iter()
            .map(|i| {
                let zi = z.row(i).to_vec();
                let m = nw_second_moment(z, y, &zi, KernelFamily::Gaussian, &bw)?;
                Ok(m.get(0, 1) * s[0] * s[1])
            })
            .collect()
    }
}

pub struct ForestEstimator {
    pub config: ForestConfig,
}

impl Cov12Estimator for ForestEstimator {
    fn name(&self) -> &str {
        "forest"
    }

    fn estimate(&self, cell: &BenchCell<'_>) -> Result<Vec<f64>> {
        let config = ForestConfig {
            seed: cell.seed,
            ..self.config.clone()
        };
        let forest = fit_forest(cell.data, cell.model.residuals(), &config)?;
        let z = cell.data.covariates();
        let s = cell.model.sigma_hat();
        (0..cell.data.n())
            .into_par_iter()
            .map(|i| Ok(forest.predict_cov(&z.row(i).to_vec())?.get(0, 1) * s[0] * s[1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub q: usize,
    pub replication: usize,
    pub rmse: Option<f64>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub q: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

impl SummaryRow {
    pub fn iqr(&self) -> Option<f64> {
        Some(self.q3? - self.q1?)
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    /// Ordered by estimator, then q, then replication.
    pub rows: Vec<BenchRow>,
    pub summary: Vec<SummaryRow>,
}

impl BenchReport {
    pub fn median(&self, method: &str, q: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.q == q)
            .and_then(|s| s.median)
    }
}

/// Linear-interpolation quantile of sorted data (`(n − 1)·p` positions).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Seed for the forest in one cell, derived from the master seed.
pub fn cell_seed(seed: u64, rep: usize, q: usize) -> u64 {
    let mut rng = replication_rng(seed, rep);
    rng.set_word_pos(1 << 40);
    let mut v = 0;
    for _ in 0..q {
        v = rng.next_u64();
    }
    v
}

pub fn default_estimators(config: &SimConfig) -> (NwEstimator, ForestEstimator) {
    (
        NwEstimator {
            bandwidth: config.nw.bandwidth,
            combine: config.nw.combine,
        },
        ForestEstimator {
            config: config.forest.clone(),
        },
    )
}

pub fn run_benchmark(config: &SimConfig) -> Result<BenchReport> {
    let (nw, rf) = default_estimators(config);
    run_benchmark_with(config, &[&nw, &rf])
}

/// Runs every (replication, q, estimator) cell. Data are generated once per
/// replication and restricted to `z1..z_q`; a failing cell is recorded
/// rather than aborting the run.
pub fn run_benchmark_with(
    config: &SimConfig,
    estimators: &[&dyn Cov12Estimator],
) -> Result<BenchReport> {
    config.validate()?;
    let per_rep: Vec<Vec<(usize, BenchRow)>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, estimators, rep))
        .collect::<Result<_>>()?;

    let mut rows: Vec<(usize, BenchRow)> = per_rep.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.0, a.1.q, a.1.replication).cmp(&(b.0, b.1.q, b.1.replication))
    });
    let rows: Vec<BenchRow> = rows.into_iter().map(|r| r.1).collect();

    let mut groups: BTreeMap<(usize, usize), (String, Vec<f64>, usize)> = BTreeMap::new();
    let order: BTreeMap<&str, usize> = estimators
        .iter()
        .enumerate()
        .map(|(i, e)| (e.name(), i))
        .collect();
    for r in &rows {
        let g = groups
            .entry((order[r.method.as_str()], r.q))
            .or_insert_with(|| (r.method.clone(), Vec::new(), 0));
        match r.rmse {
            Some(v) => g.1.push(v),
            None => g.2 += 1,
        }
    }
    let summary = groups
        .into_iter()
        .map(|((_, q), (method, mut vals, failed))| {
            vals.sort_by(f64::total_cmp);
            SummaryRow {
                method,
                q,
                n_ok: vals.len(),
                n_failed: failed,
                median: quantile_sorted(&vals, 0.5),
                q1: quantile_sorted(&vals, 0.25),
                q3: quantile_sorted(&vals, 0.75),
            }
        })
        .collect();
    Ok(BenchReport { rows, summary })
}

fn run_replication(
    config: &SimConfig,
    estimators: &[&dyn Cov12Estimator],
    rep: usize,
) -> Result<Vec<(usize, BenchRow)>> {
    let sim = simulate_replication(config, rep)?;
    let truth = sim.outputs.cov12();
    let mut out = Vec::new();
    for &q in &config.q_values {
        let z = sim.covariates.z.slice(ndarray::s![.., 0..q]).to_owned();
        let data = Dataset::from_arrays(z, sim.outputs.x.clone())?;
        let model = KernelModel::fit(
            &data,
            config.nw.mean_bandwidth,
            KernelSpec::gaussian(config.nw.mean_bandwidth),
        );
        for (e_idx, est) in estimators.iter().enumerate() {
            let start = Instant::now();
            let result = match &model {
                Ok(m) => Ok(m),
                Err(e) => Err(Error::Format(format!("{}: {e}", e.category()))),
            }
            .and_then(|m| {
                let cell = BenchCell {
                    data: &data,
                    model: m,
                    truth_cov12: &truth,
                    replication: rep,
                    q,
                    seed: cell_seed(config.seed, rep, q),
                };
                rmse_cov12(&est.estimate(&cell)?, &truth)
            });
            let wall_time_s = start.elapsed().as_secs_f64();
            let (rmse, error) = match result {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(format!("{}: {e}", e.category()))),
            };
            out.push((
                e_idx,
                BenchRow {
                    method: est.name().to_string(),
                    q,
                    replication: rep,
                    rmse,
                    error,
                    wall_time_s,
                },
            ));
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct BenchMeta<'a> {
    format: &'a str,
    version: u32,
    software_version: &'a str,
    config_sha256: String,
    results: &'a str,
    summary: &'a str,
    timings: &'a str,
    config: &'a str,
}

/// Writes `results.csv`, `summary.csv`, `config.toml` and `bench.json`, which
/// depend only on the configuration, plus `timings.csv` with wall times.
pub fn write_report(report: &BenchReport, config: &SimConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(["method", "q", "replication", "rmse", "status"])?;
    for r in &report.rows {
        let status = r.error.as_deref().map_or("ok".to_string(), |e| format!("error {e}"));
        w.write_record([
            r.method.clone(),
            r.q.to_string(),
            r.replication.to_string(),
            fmt_opt(r.rmse),
            status,
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["method", "q", "n_ok", "n_failed", "median_rmse", "q1", "q3", "iqr"])?;
    for s in &report.summary {
        w.write_record([
            s.method.clone(),
            s.q.to_string(),
            s.n_ok.to_string(),
            s.n_failed.to_string(),
            fmt_opt(s.median),
            fmt_opt(s.q1),
            fmt_opt(s.q3),
            fmt_opt(s.iqr()),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
    w.write_record(["method", "q", "replication", "wall_time_s"])?;
    for r in &report.rows {
        w.write_record([
            r.method.clone(),
            r.q.to_string(),
            r.replication.to_string(),
            format!("{:.6}", r.wall_time_s),
        ])?;
    }
    w.flush()?;

    let toml = config.to_toml()?;
    std::fs::write(dir.join("config.toml"), &toml)?;
    let meta = BenchMeta {
        format: BENCH_FORMAT,
        version: BENCH_FORMAT_VERSION,
        software_version: env!("CARGO_PKG_VERSION"),
        config_sha256: hex::encode(Sha256::digest(toml.as_bytes())),
        results: "results.csv",
        summary: "summary.csv",
        timings: "timings.csv",
        config: "config.toml",
    };
    std::fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oracle;

    impl Cov12Estimator for Oracle {
        fn name(&self) -> &str {
            "oracle"
        }
        fn estimate(&self, cell: &BenchCell<'_>) -> Result<Vec<f64>> {
            Ok(cell.truth_cov12.to_vec())
        }
    }

    struct Broken;

    impl Cov12Estimator for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn estimate(&self, cell: &BenchCell<'_>) -> Result<Vec<f64>> {
            if cell.replication == 1 {
                Err(Error::ZeroWeightSum)
            } else {
                Ok(vec![0.0; cell.truth_cov12.len()])
            }
        }
    }

    fn tiny() -> SimConfig {
        SimConfig {
            n_hours: 24 * 10,
            replications: 3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_cov12(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let t = vec![0.3; 17];
        let e: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((rmse_cov12(&e, &t).unwrap() - 0.1).abs() < 1e-15);
        assert!(rmse_cov12(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), Some(2.5));
        assert_eq!(quantile_sorted(&v, 0.25), Some(1.75));
        assert_eq!(quantile_sorted(&[7.0], 0.75), Some(7.0));
        assert_eq!(quantile_sorted(&[], 0.5), None);
    }

    #[test]
    fn oracle_pipeline_scores_zero() {
        let r = run_benchmark_with(&tiny(), &[&Oracle]).unwrap();
        assert_eq!(r.rows.len(), 9);
        assert!(r.rows.iter().all(|row| row.rmse == Some(0.0)));
        assert_eq!(r.summary.len(), 3);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let r = run_benchmark_with(&tiny(), &[&Oracle, &Broken]).unwrap();
        let broken: Vec<_> = r.rows.iter().filter(|x| x.method == "broken").collect();
        assert_eq!(broken.len(), 9);
        assert_eq!(broken.iter().filter(|x| x.error.is_some()).count(), 3);
        let s = r.summary.iter().find(|s| s.method == "broken" && s.q == 2).unwrap();
        assert_eq!((s.n_ok, s.n_failed), (2, 1));
        // Ordering: estimator, q, replication.
        assert_eq!(r.rows[0].method, "oracle");
        assert_eq!((r.rows[1].q, r.rows[1].replication), (2, 1));
    }

    #[test]
    fn cell_seeds_differ() {
        let a = cell_seed(1, 0, 2);
        assert_eq!(a, cell_seed(1, 0, 2));
        assert_ne!(a, cell_seed(1, 0, 3));
        assert_ne!(a, cell_seed(1, 1, 2));
        assert_ne!(a, cell_seed(2, 0, 2));
    }

    #[test]
    fn report_files_are_deterministic() {
        let cfg = SimConfig {
            n_hours: 24 * 20,
            replications: 2,
            q_values: vec![2, 4],
            forest: ForestConfig {
                n_trees: 5,
                ..ForestConfig::default()
            },
            ..SimConfig::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_report(&run_benchmark(&cfg).unwrap(), &cfg, d1.path()).unwrap();
        write_report(&run_benchmark(&cfg).unwrap(), &cfg, d2.path()).unwrap();
        for f in ["results.csv", "summary.csv", "config.toml", "bench.json"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let back = SimConfig::load(&d1.path().join("config.toml")).unwrap();
        assert_eq!(back, cfg);
    }
}
