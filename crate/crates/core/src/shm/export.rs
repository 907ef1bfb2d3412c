use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{auto_grid, support_mask, DEFAULT_RESOLUTION};
use super::ingest::{ingest, IngestSpec};
use crate::data::{Dataset, GridAxis, QueryGrid};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig};
use crate::kernel::{
    select_bandwidth, select_mean_bandwidth, BandwidthSearch, CombineRule, KernelModel, KernelSpec,
};
use crate::linalg::{cov_to_corr, SymMatrix};
use crate::method::Method;

pub const GRID_FORMAT: &str = "condcov-grid";
pub const MANIFEST_FORMAT: &str = "condcov-run";
pub const FORMAT_VERSION: u32 = 1;

pub const GRID_CSV: &str = "grid.csv";
pub const GRID_META: &str = "grid.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorParams {
    pub method: Method,
    /// NW covariance bandwidth; cross-validated when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Mean-smoother bandwidth; defaults to `bandwidth`, else cross-validated.
    #[serde(default)]
    pub mean_bandwidth: Option<f64>,
    #[serde(default)]
    pub combine: CombineRule,
    /// Divide covariates by their standard deviations before distances.
    #[serde(default)]
    pub standardize_covariates: bool,
    #[serde(default)]
    pub forest: ForestConfig,
    /// Also write the fitted model.
    #[serde(default)]
    pub save_model: bool,
}

impl EstimatorParams {
    pub fn new(method: Method) -> Self {
        EstimatorParams {
            method,
            bandwidth: None,
            mean_bandwidth: None,
            combine: CombineRule::default(),
            standardize_covariates: false,
            forest: ForestConfig::default(),
            save_model: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// Rectangular grid over the observed ranges.
    Auto {
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    /// Explicit points: a CSV with one column per covariate name.
    Points { path: PathBuf },
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto {
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self, data: &Dataset) -> Result<QueryGrid> {
        match self {
            GridSpec::Auto { resolution } => auto_grid(data, *resolution),
            GridSpec::Points { path } => read_grid_points(path, data.covariate_names()),
        }
    }
}

/// Reads query points, picking columns by covariate name.
pub fn read_grid_points(path: &Path, names: &[String]) -> Result<QueryGrid> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| perr(0, e.to_string()))?;
    let headers = r.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| perr(1, format!("column '{n}' not found")))
        })
        .collect::<Result<_>>()?;
    let mut vals = Vec::new();
    let mut m = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| perr(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for &c in &cols {
            let s = rec.get(c).unwrap_or("");
            let v: f64 = s
                .parse()
                .map_err(|_| perr(line, format!("bad number '{s}'")))?;
            vals.push(v);
        }
        m += 1;
    }
    let points = Array2::from_shape_vec((m, cols.len()), vals)
        .map_err(|e| Error::invalid(e.to_string()))?;
    QueryGrid::from_points(points)
}

/// Everything needed to re-run a fit and reproduce its files byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub software_version: String,
    pub ingest: Option<IngestSpec>,
    pub dataset_fingerprint: String,
    pub n_rows: usize,
    pub params: EstimatorParams,
    /// Bandwidths actually used after any cross-validation.
    pub bandwidth_used: Option<f64>,
    pub mean_bandwidth_used: f64,
    pub seed: Option<u64>,
    pub grid: GridSpec,
    pub grid_csv: String,
    pub grid_meta: String,
    pub model_file: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT || m.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest {} v{}",
                m.format, m.version
            )));
        }
        Ok(m)
    }
}

#[derive(Serialize)]
struct GridMeta<'a> {
    format: &'a str,
    version: u32,
    method: Method,
    covariates: &'a [String],
    outputs: &'a [String],
    columns: &'a [String],
    n_points: usize,
    n_masked: usize,
    axes: Option<&'a [GridAxis]>,
    /// `cov_*` columns are in output units, `corr_*` are dimensionless.
    cov_scale: &'a str,
}

/// Grid evaluation result, one entry per point; `None` where masked.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub grid: QueryGrid,
    pub masked: Vec<bool>,
    /// Covariance in output units and correlation.
    pub values: Vec<Option<(SymMatrix, SymMatrix)>>,
    pub bandwidth_used: Option<f64>,
    pub mean_bandwidth_used: f64,
}

impl GridResult {
    pub fn n_masked(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }
}

/// Fits the chosen estimator and evaluates it on the unmasked grid points.
pub fn evaluate_grid(
    data: &Dataset,
    params: &EstimatorParams,
    grid_spec: &GridSpec,
) -> Result<(GridResult, FittedModel)> {
    let mut search = BandwidthSearch::for_data_with(data, params.standardize_covariates)?;
    search.combine = params.combine;
    search.mean_bandwidth = params.mean_bandwidth.or(params.bandwidth);
    let pilot_h = select_mean_bandwidth(data, &search)?;
    search.mean_bandwidth = Some(pilot_h);

    let bandwidth_used = match params.method {
        Method::Nw => Some(match params.bandwidth {
            Some(h) => h,
            None => select_bandwidth(data, &search)?.bandwidth,
        }),
        Method::Forest => None,
    };
    // A cross-validated bandwidth serves both stages unless the mean one is pinned.
    let mean_h = match (params.mean_bandwidth, params.bandwidth, bandwidth_used) {
        (None, None, Some(h)) => h,
        _ => pilot_h,
    };
    let model = KernelModel::fit_with(
        data,
        mean_h,
        KernelSpec::gaussian(bandwidth_used.unwrap_or(mean_h)),
        params.standardize_covariates,
    )?;
    let fitted = match params.method {
        Method::Nw => FittedModel::Nw(Box::new(model)),
        Method::Forest => {
            let forest = fit_forest(data, model.residuals(), &params.forest)?
                .with_output_scale(model.sigma_hat().to_vec())?;
            FittedModel::Forest(Box::new(forest), model.sigma_hat().to_vec())
        }
    };

    let grid = grid_spec.resolve(data)?;
    let masked = support_mask(data, &grid)?;
    let pts = grid.points();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|g| {
            if masked[g] {
                return Ok(None);
            }
            let z = pts.row(g).to_vec();
            fitted
                .cov_corr(&z)
                .map(Some)
                .map_err(|e| Error::GridPoint {
                    index: g,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GridResult {
            grid,
            masked,
            values,
            bandwidth_used,
            mean_bandwidth_used: mean_h,
        },
        fitted,
    ))
}

#[derive(Debug)]
pub enum FittedModel {
    Nw(Box<KernelModel>),
    Forest(Box<crate::forest::CovForest>, Vec<f64>),
}

impl FittedModel {
    /// Covariance in output units and the matching correlation.
    pub fn cov_corr(&self, z: &[f64]) -> Result<(SymMatrix, SymMatrix)> {
        let (s, scale) = match self {
            FittedModel::Nw(m) => (m.covariance(z)?.matrix, m.sigma_hat()),
            FittedModel::Forest(f, sd) => (f.predict_cov(z)?, sd.as_slice()),
        };
        let corr = cov_to_corr(&s)?;
        Ok((s.congruence_diag(scale), corr))
    }

    fn save(&self, dir: &Path) -> Result<String> {
        match self {
            FittedModel::Nw(m) => {
                let name = "nw-model.json";
                std::fs::write(dir.join(name), serde_json::to_string(m.as_ref())?)?;
                Ok(name.into())
            }
            FittedModel::Forest(f, _) => {
                let name = "forest.json";
                f.save(&dir.join(name))?;
                Ok(name.into())
            }
        }
    }
}

pub fn grid_columns(data: &Dataset) -> Vec<String> {
    let p = data.p();
    let mut cols: Vec<String> = data.covariate_names().to_vec();
    cols.push("masked".into());
    for j in 0..p {
        for k in j..p {
            cols.push(format!("cov_{}_{}", j + 1, k + 1));
        }
    }
    for j in 0..p {
        for k in j + 1..p {
            cols.push(format!("corr_{}_{}", j + 1, k + 1));
        }
    }
    cols
}

pub fn write_grid(data: &Dataset, result: &GridResult, method: Method, dir: &Path) -> Result<()> {
    let p = data.p();
    let columns = grid_columns(data);
    let mut w = csv::Writer::from_path(dir.join(GRID_CSV))?;
    w.write_record(&columns)?;
    let pts = result.grid.points();
    let n_values = p * (p + 1) / 2 + p * (p - 1) / 2;
    for (g, v) in result.values.iter().enumerate() {
        let mut rec: Vec<String> = pts.row(g).iter().map(|x| x.to_string()).collect();
        match v {
            None => {
                rec.push("1".into());
                rec.extend(std::iter::repeat_n(String::new(), n_values));
            }
            Some((cov, corr)) => {
                rec.push("0".into());
                rec.extend(cov.packed().iter().map(|x| x.to_string()));
                for j in 0..p {
                    for k in j + 1..p {
                        rec.push(corr.get(j, k).to_string());
                    }
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let meta = GridMeta {
        format: GRID_FORMAT,
        version: FORMAT_VERSION,
        method,
        covariates: data.covariate_names(),
        outputs: data.output_names(),
        columns: &columns,
        n_points: result.grid.len(),
        n_masked: result.n_masked(),
        axes: result.grid.axes(),
        cov_scale: "output",
    };
    std::fs::write(dir.join(GRID_META), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Fits, evaluates on the grid and writes `grid.csv`, `grid.json`,
/// `manifest.json` and optionally the model into `dir`.
pub fn fit_and_export(
    data: &Dataset,
    params: &EstimatorParams,
    grid_spec: &GridSpec,
    ingest_spec: Option<&IngestSpec>,
    dir: &Path,
) -> Result<(RunManifest, GridResult)> {
    std::fs::create_dir_all(dir)?;
    let (result, fitted) = evaluate_grid(data, params, grid_spec)?;
    write_grid(data, &result, params.method, dir)?;
    let model_file = if params.save_model {
        Some(fitted.save(dir)?)
    } else {
        None
    };
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: FORMAT_VERSION,
        software_version: env!("CARGO_PKG_VERSION").into(),
        ingest: ingest_spec.cloned(),
        dataset_fingerprint: data.fingerprint(),
        n_rows: data.n(),
        params: params.clone(),
        bandwidth_used: result.bandwidth_used,
        mean_bandwidth_used: result.mean_bandwidth_used,
        seed: (params.method == Method::Forest).then_some(params.forest.seed),
        grid: grid_spec.clone(),
        grid_csv: GRID_CSV.into(),
        grid_meta: GRID_META.into(),
        model_file,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok((manifest, result))
}

/// Re-runs a recorded fit into `dir`.
pub fn replay(manifest_path: &Path, dir: &Path) -> Result<RunManifest> {
    let m = RunManifest::load(manifest_path)?;
    let spec = m
        .ingest
        .as_ref()
        .ok_or_else(|| Error::invalid("manifest has no ingest section to replay"))?;
    let (data, _) = ingest(spec)?;
    if data.fingerprint() != m.dataset_fingerprint {
        return Err(Error::invalid(
            "input data changed since the manifest was written (fingerprint mismatch)",
        ));
    }
    let (out, _) = fit_and_export(&data, &m.params, &m.grid, Some(spec), dir)?;
    Ok(out)
}

/// Config file shared by the data commands: `[ingest]`, and for `fit` also
/// `[estimator]` and `[grid]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub ingest: IngestSpec,
    #[serde(default)]
    pub estimator: Option<EstimatorParams>,
    #[serde(default)]
    pub grid: GridSpec,
}

impl FitConfig {
    /// Loads a config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: FitConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if c.ingest.input.is_relative() {
            c.ingest.input = base.join(&c.ingest.input);
        }
        if let GridSpec::Points { path: p } = &mut c.grid {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }
}
