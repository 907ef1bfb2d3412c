//! Monte Carlo study: synthetic seasonal covariates, heteroscedastic
//! bivariate outputs with AR(1) measurement noise, and an RMSE benchmark of
//! both estimators over the number of covariates.

mod bench;
mod config;
mod generate;

pub use bench::{
    cell_seed, default_estimators, quantile_sorted, rmse_cov12, run_benchmark, run_benchmark_with,
    write_report, BenchCell, BenchReport, BenchRow, Cov12Estimator, ForestEstimator, NwEstimator,
    SummaryRow, BENCH_FORMAT, BENCH_FORMAT_VERSION,
};
pub use config::{
    default_covariates, logistic, CovariateSpec, LinearSurface, LogisticSurface, NoiseSpec,
    NwBandwidth, NwSettings, SimConfig, TruthSurfaces, ZetaInterval,
};
pub use generate::{
    ar1_series, covariate_value, gen_covariates, gen_outputs, replication_rng,
    simulate_replication, SimCovariates, SimData, SimOutputs, DAYS_PER_YEAR, HOURS_PER_DAY,
};
