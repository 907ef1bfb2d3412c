//! `condcov` command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::forest::CutpointLimit;
use crate::kernel::{select_bandwidth, BandwidthSearch, CombineRule};
use crate::method::Method;
use crate::shm::{
    fit_and_export, ingest, replay, EstimatorParams, FitConfig, GapReport, GridSpec, IngestSpec,
    MissingPolicy,
};
use crate::sim::{run_benchmark, write_report, NwBandwidth, SimConfig};

/// `println!` that reports write failures (a closed pipe) instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout().lock(), $($arg)*)?
    }};
}

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "CONDCOV_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "condcov",
    version,
    about = "Conditional covariance and correlation estimation for monitoring data"
)]
struct Cli {
    /// Worker threads (default: $CONDCOV_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo benchmark
    Simulate(SimulateArgs),
    /// Ingest data, fit an estimator and export covariance/correlation grids
    Fit(FitArgs),
    /// Cross-validate the NW bandwidth and print the loss table
    SelectBandwidth(SelectArgs),
    /// Print a dataset and gap summary
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation config (TOML); built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Covariate counts, e.g. 2,3,4
    #[arg(long, value_delimiter = ',')]
    q: Vec<usize>,
    /// NW bandwidth, or "cv"
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long)]
    n_hours: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Config file with an [ingest] section (and optionally [estimator], [grid])
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV
    #[arg(long)]
    input: Option<PathBuf>,
    /// Covariate column names, comma separated
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Output column names, comma separated
    #[arg(long, value_delimiter = ',')]
    outputs: Vec<String>,
    #[arg(long)]
    timestamp_column: Option<String>,
    /// Keep rows at or after this time
    #[arg(long)]
    start: Option<String>,
    /// Keep rows before this time
    #[arg(long)]
    end: Option<String>,
    /// Missing-value policy
    #[arg(long, value_parser = ["interpolate", "drop"])]
    missing: Option<String>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Re-run a recorded manifest instead of reading other options
    #[arg(long, conflicts_with_all = ["config", "input", "method"])]
    replay: Option<PathBuf>,
    /// nw or forest
    #[arg(long)]
    method: Option<String>,
    /// NW covariance bandwidth (cross-validated when omitted)
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    mean_bandwidth: Option<f64>,
    /// Bandwidth combination rule for cross-validation
    #[arg(long)]
    combine: Option<String>,
    /// Divide covariates by their standard deviations before distances
    #[arg(long)]
    standardize_covariates: bool,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    min_node_size: Option<usize>,
    /// Cutpoint candidates per covariate, or "all"
    #[arg(long)]
    max_cutpoints: Option<String>,
    /// Points per axis of the automatic grid
    #[arg(long)]
    grid_resolution: Option<usize>,
    /// CSV of explicit query points
    #[arg(long, conflicts_with = "grid_resolution")]
    grid_points: Option<PathBuf>,
    /// Also write the fitted model
    #[arg(long)]
    save_model: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    combine: Option<String>,
    /// Fix the mean bandwidth instead of cross-validating it
    #[arg(long)]
    mean_bandwidth: Option<f64>,
    #[arg(long)]
    standardize_covariates: bool,
    #[arg(long)]
    folds: Option<usize>,
    /// Also write the table as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    data: DataArgs,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
    });
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error[threads]: {e}");
            return 1;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => 0,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::SelectBandwidth(a) => select(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(t) = a.trees {
        cfg.forest.n_trees = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !a.q.is_empty() {
        cfg.q_values = a.q;
    }
    if let Some(n) = a.n_hours {
        cfg.n_hours = n;
    }
    if let Some(b) = a.bandwidth {
        cfg.nw.bandwidth = if b == "cv" {
            NwBandwidth::CrossValidated
        } else {
            NwBandwidth::Fixed(b.parse().map_err(|_| Error::invalid(format!("bad bandwidth '{b}'")))?)
        };
    }
    cfg.validate()?;
    let report = run_benchmark(&cfg)?;
    write_report(&report, &cfg, &a.out)?;
    out!("method  q  n_ok  failed  median_rmse  iqr");
    for s in &report.summary {
        out!(
            "{:<7} {:>1} {:>5} {:>7}  {:>11}  {}",
            s.method,
            s.q,
            s.n_ok,
            s.n_failed,
            s.median.map_or("-".into(), |v| format!("{v:.6}")),
            s.iqr().map_or("-".into(), |v| format!("{v:.6}")),
        );
    }
    out!("wrote {}", a.out.display());
    Ok(())
}

/// Builds the ingest spec from an optional config plus flag overrides.
fn resolve_data(d: &DataArgs) -> Result<(IngestSpec, Option<FitConfig>)> {
    let cfg = d.config.as_deref().map(FitConfig::load).transpose()?;
    let mut spec = match (&cfg, &d.input) {
        (Some(c), _) => c.ingest.clone(),
        (None, Some(input)) => IngestSpec::new(input.clone(), &[], &[]),
        (None, None) => return Err(Error::invalid("either --config or --input is required")),
    };
    if let Some(i) = &d.input {
        spec.input = i.clone();
    }
    if !d.covariates.is_empty() {
        spec.covariates = d.covariates.clone();
    }
    if !d.outputs.is_empty() {
        spec.outputs = d.outputs.clone();
    }
    if let Some(t) = &d.timestamp_column {
        spec.timestamp_column = t.clone();
    }
    if d.start.is_some() {
        spec.start = d.start.clone();
    }
    if d.end.is_some() {
        spec.end = d.end.clone();
    }
    match d.missing.as_deref() {
        Some("drop") => spec.missing = MissingPolicy::DropRows,
        Some(_) => spec.missing = MissingPolicy::LinearInterpolate,
        None => {}
    }
    Ok((spec, cfg))
}

fn print_warnings(r: &GapReport) {
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn fit(a: FitArgs) -> Result<()> {
    if let Some(m) = &a.replay {
        let man = replay(m, &a.out)?;
        out!(
            "replayed {} fit on {} rows into {}",
            man.params.method,
            man.n_rows,
            a.out.display()
        );
        return Ok(());
    }
    let (spec, cfg) = resolve_data(&a.data)?;
    let mut params = cfg
        .as_ref()
        .and_then(|c| c.estimator.clone())
        .unwrap_or_else(|| EstimatorParams::new(Method::Nw));
    let mut grid = cfg.as_ref().map(|c| c.grid.clone()).unwrap_or_default();
    match &a.method {
        Some(m) => params.method = m.parse()?,
        None if cfg.as_ref().and_then(|c| c.estimator.as_ref()).is_none() => {
            return Err(Error::invalid("--method is required without an [estimator] config"))
        }
        None => {}
    }
    if a.bandwidth.is_some() {
        params.bandwidth = a.bandwidth;
    }
    if a.mean_bandwidth.is_some() {
        params.mean_bandwidth = a.mean_bandwidth;
    }
    if let Some(c) = &a.combine {
        params.combine = c.parse()?;
    }
    params.standardize_covariates |= a.standardize_covariates;
    params.save_model |= a.save_model;
    if let Some(t) = a.trees {
        params.forest.n_trees = t;
    }
    if let Some(s) = a.seed {
        params.forest.seed = s;
    }
    if a.mtry.is_some() {
        params.forest.mtry = a.mtry;
    }
    if a.min_node_size.is_some() {
        params.forest.min_node_size = a.min_node_size;
    }
    if let Some(c) = &a.max_cutpoints {
        params.forest.max_candidate_cutpoints = parse_cutpoints(c)?;
    }
    if let Some(r) = a.grid_resolution {
        grid = GridSpec::Auto { resolution: r };
    }
    if let Some(p) = &a.grid_points {
        grid = GridSpec::Points { path: p.clone() };
    }

    let (data, report) = ingest(&spec)?;
    print_warnings(&report);
    let (man, res) = fit_and_export(&data, &params, &grid, Some(&spec), &a.out)?;
    out!(
        "{} fit on {} rows ({} interpolated cells); {} grid points, {} masked",
        man.params.method,
        data.n(),
        report.total_interpolated(),
        res.grid.len(),
        res.n_masked()
    );
    if let Some(h) = man.bandwidth_used {
        out!("bandwidth {h}, mean bandwidth {}", man.mean_bandwidth_used);
    }
    out!("wrote {}", a.out.display());
    Ok(())
}

fn parse_cutpoints(s: &str) -> Result<CutpointLimit> {
    if s == "all" {
        return Ok(CutpointLimit::All);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(CutpointLimit::Max(n)),
        _ => Err(Error::invalid(format!("bad cutpoint limit '{s}'"))),
    }
}

fn select(a: SelectArgs) -> Result<()> {
    let (spec, cfg) = resolve_data(&a.data)?;
    let est = cfg.as_ref().and_then(|c| c.estimator.clone());
    let standardize =
        a.standardize_covariates || est.as_ref().is_some_and(|e| e.standardize_covariates);
    let (data, report) = ingest(&spec)?;
    print_warnings(&report);
    let mut search = BandwidthSearch::for_data_with(&data, standardize)?;
    search.combine = match &a.combine {
        Some(c) => c.parse()?,
        None => est.as_ref().map_or(CombineRule::default(), |e| e.combine),
    };
    search.mean_bandwidth = a
        .mean_bandwidth
        .or_else(|| est.as_ref().and_then(|e| e.mean_bandwidth));
    if let Some(k) = a.folds {
        search.folds = k;
    }
    let sel = select_bandwidth(&data, &search)?;
    let mark = |h: f64, m: Option<f64>| if m == Some(h) { "*" } else { " " };
    out!("{:>14} {:>16} {:>16} {:>16}", "bandwidth", "frobenius", "trace", "geom_mean");
    for r in &sel.table {
        out!(
            "{:>14.6} {:>15.6e}{} {:>15.6e}{} {:>15.6e}{}",
            r.bandwidth,
            r.frobenius,
            mark(r.bandwidth, sel.frobenius_minimizer),
            r.trace,
            mark(r.bandwidth, sel.trace_minimizer),
            r.geometric_mean(),
            mark(r.bandwidth, sel.geom_loss_minimizer),
        );
    }
    out!("mean bandwidth   {}", sel.mean_bandwidth.unwrap_or(f64::NAN));
    out!("rule             {}", sel.rule);
    out!("selected         {}", sel.bandwidth);
    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["bandwidth", "frobenius", "trace", "geom_mean"])?;
        for r in &sel.table {
            w.write_record([
                r.bandwidth.to_string(),
                r.frobenius.to_string(),
                r.trace.to_string(),
                r.geometric_mean().to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let (spec, _) = resolve_data(&a.data)?;
    let (data, report) = ingest(&spec)?;
    print_warnings(&report);
    out!("input            {}", spec.input.display());
    if let Some(ts) = data.timestamps() {
        out!(
            "span             {} .. {}",
            crate::shm::format_timestamp(ts[0]),
            crate::shm::format_timestamp(ts[ts.len() - 1])
        );
    }
    out!("rows             {}  covariates {}  outputs {}", data.n(), data.q(), data.p());
    out!("fingerprint      {}", data.fingerprint());
    {
        use std::io::Write as _;
        write!(std::io::stdout().lock(), "{report}")?;
    }
    out!("column            min          mean          max");
    let (z, x) = (data.covariates(), data.outputs());
    let cols = data
        .covariate_names()
        .iter()
        .zip(z.columns())
        .chain(data.output_names().iter().zip(x.columns()));
    for (name, c) in cols {
        let min = c.iter().copied().fold(f64::INFINITY, f64::min);
        let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = c.sum() / c.len() as f64;
        out!("{name:<16} {min:>12.5} {mean:>12.5} {max:>12.5}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(cli_main(["condcov", "--bogus"]), 2);
        assert_eq!(cli_main(["condcov"]), 2);
        assert_eq!(cli_main(["condcov", "fit", "--out", "x", "--method"]), 2);
        assert_eq!(cli_main(["condcov", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(cli_main(["condcov", "inspect", "--input", "/nonexistent/x.csv"]), 1);
        assert_eq!(cli_main(["condcov", "inspect"]), 1);
    }

    #[test]
    fn cutpoint_flag() {
        assert_eq!(parse_cutpoints("all").unwrap(), CutpointLimit::All);
        assert_eq!(parse_cutpoints("64").unwrap(), CutpointLimit::Max(64));
        assert!(parse_cutpoints("0").is_err());
    }
}
