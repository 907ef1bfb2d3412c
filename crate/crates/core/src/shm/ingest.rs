use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    #[serde(alias = "interpolate")]
    LinearInterpolate,
    #[serde(alias = "drop")]
    DropRows,
}

fn default_timestamp_column() -> String {
    "timestamp".to_string()
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    pub input: PathBuf,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    pub covariates: Vec<String>,
    pub outputs: Vec<String>,
    /// Inclusive lower bound of the date filter.
    #[serde(default)]
    pub start: Option<String>,
    /// Exclusive upper bound of the date filter.
    #[serde(default)]
    pub end: Option<String>,
    #[serde(default)]
    pub missing: MissingPolicy,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

impl IngestSpec {
    pub fn new(input: impl Into<PathBuf>, covariates: &[&str], outputs: &[&str]) -> Self {
        IngestSpec {
            input: input.into(),
            timestamp_column: default_timestamp_column(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            start: None,
            end: None,
            missing: MissingPolicy::default(),
            delimiter: default_delimiter(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() || self.outputs.is_empty() {
            return Err(Error::invalid("need at least one covariate and one output column"));
        }
        let mut seen = HashSet::new();
        for name in std::iter::once(&self.timestamp_column)
            .chain(&self.covariates)
            .chain(&self.outputs)
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("column '{name}' listed twice")));
            }
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::invalid("delimiter must be a single ASCII character"));
        }
        if let (Some(a), Some(b)) = (self.start_ts()?, self.end_ts()?) {
            if a >= b {
                return Err(Error::invalid("date range start must precede end"));
            }
        }
        Ok(())
    }

    pub fn start_ts(&self) -> Result<Option<i64>> {
        self.start.as_deref().map(parse_bound).transpose()
    }

    pub fn end_ts(&self) -> Result<Option<i64>> {
        self.end.as_deref().map(parse_bound).transpose()
    }
}

/// Seconds since the epoch for a naive (zone-less) timestamp.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc().timestamp())
}

pub fn format_timestamp(t: i64) -> String {
    chrono::DateTime::from_timestamp(t, 0)
        .map(|d| d.naive_utc().format(TIMESTAMP_FORMAT).to_string())
        .unwrap_or_else(|| t.to_string())
}

fn parse_bound(s: &str) -> Result<i64> {
    parse_timestamp(s)
        .or_else(|| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .map(|t| t.and_utc().timestamp())
        })
        .ok_or_else(|| Error::invalid(format!("cannot parse date bound '{s}'")))
}

fn is_missing_token(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "" | "nan" | "na" | "n/a" | "null" | "none" | "-"
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnGaps {
    pub column: String,
    /// Missing cells inside the kept window.
    pub missing: usize,
    pub interpolated: usize,
}

/// What ingestion did to the raw rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows_read: usize,
    pub rows_in_window: usize,
    pub leading_dropped: usize,
    pub trailing_dropped: usize,
    /// Interior rows dropped under [`MissingPolicy::DropRows`].
    pub interior_dropped: usize,
    pub rows_kept: usize,
    pub columns: Vec<ColumnGaps>,
    /// Hourly slots absent between consecutive kept timestamps.
    pub missing_hours: i64,
    pub longest_gap_hours: i64,
    pub warnings: Vec<String>,
}

impl GapReport {
    pub fn total_interpolated(&self) -> usize {
        self.columns.iter().map(|c| c.interpolated).sum()
    }
}

impl std::fmt::Display for GapReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rows read        {}", self.rows_read)?;
        writeln!(f, "rows in window   {}", self.rows_in_window)?;
        writeln!(f, "leading dropped  {}", self.leading_dropped)?;
        writeln!(f, "trailing dropped {}", self.trailing_dropped)?;
        writeln!(f, "interior dropped {}", self.interior_dropped)?;
        writeln!(f, "rows kept        {}", self.rows_kept)?;
        writeln!(f, "missing hours    {} (longest gap {} h)", self.missing_hours, self.longest_gap_hours)?;
        writeln!(f, "column            missing  interpolated")?;
        for c in &self.columns {
            writeln!(f, "{:<16} {:>8} {:>13}", c.column, c.missing, c.interpolated)?;
        }
        Ok(())
    }
}

struct RawRow {
    line: usize,
    ts: i64,
    values: Vec<Option<f64>>,
}

/// Reads, filters and gap-fills a monitoring export.
pub fn ingest(spec: &IngestSpec) -> Result<(Dataset, GapReport)> {
    spec.validate()?;
    let path = &spec.input;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("column '{name}' not found")))
    };
    let ts_col = find(&spec.timestamp_column)?;
    let value_cols: Vec<usize> = spec
        .covariates
        .iter()
        .chain(&spec.outputs)
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw_ts)
            .ok_or_else(|| parse_err(line, format!("bad timestamp '{raw_ts}'")))?;
        let values = value_cols
            .iter()
            .map(|&c| {
                let s = rec.get(c).unwrap_or("");
                if is_missing_token(s) {
                    return Ok(None);
                }
                let v: f64 = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad number '{s}'")))?;
                Ok(v.is_finite().then_some(v))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(RawRow { line, ts, values });
    }
    let rows_read = rows.len();

    rows.sort_by_key(|r| r.ts);
    if let Some(w) = rows.windows(2).find(|w| w[0].ts == w[1].ts) {
        return Err(Error::NonMonotoneTimestamps {
            line: w[0].line.max(w[1].line),
        });
    }

    let (start, end) = (spec.start_ts()?, spec.end_ts()?);
    rows.retain(|r| start.is_none_or(|s| r.ts >= s) && end.is_none_or(|e| r.ts < e));
    let rows_in_window = rows.len();
    if rows.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }

    let ncol = value_cols.len();
    let names: Vec<&String> = spec.covariates.iter().chain(&spec.outputs).collect();
    let mut warnings = Vec::new();

    // Never extrapolate: trim rows before every column's first value and
    // after every column's last value.
    let mut first = 0;
    let mut last = rows.len() - 1;
    for c in 0..ncol {
        let Some(f) = rows.iter().position(|r| r.values[c].is_some()) else {
            return Err(Error::EmptyAfterFilter);
        };
        let l = rows.iter().rposition(|r| r.values[c].is_some()).unwrap_or(f);
        if f > 0 {
            warnings.push(format!(
                "column '{}' has {f} leading missing value(s); rows dropped",
                names[c]
            ));
        }
        if l + 1 < rows.len() {
            warnings.push(format!(
                "column '{}' has {} trailing missing value(s); rows dropped",
                names[c],
                rows.len() - 1 - l
            ));
        }
        first = first.max(f);
        last = last.min(l);
    }
    if first > last {
        return Err(Error::EmptyAfterFilter);
    }
    let leading_dropped = first;
    let trailing_dropped = rows.len() - 1 - last;
    let mut rows: Vec<RawRow> = rows.drain(first..=last).collect();

    let mut columns: Vec<ColumnGaps> = names
        .iter()
        .enumerate()
        .map(|(c, n)| ColumnGaps {
            column: n.to_string(),
            missing: rows.iter().filter(|r| r.values[c].is_none()).count(),
            interpolated: 0,
        })
        .collect();

    let mut interior_dropped = 0;
    match spec.missing {
        MissingPolicy::DropRows => {
            let before = rows.len();
            rows.retain(|r| r.values.iter().all(Option::is_some));
            interior_dropped = before - rows.len();
        }
        MissingPolicy::LinearInterpolate => {
            for (c, col) in columns.iter_mut().enumerate() {
                let mut prev: Option<usize> = None;
                let mut i = 0;
                while i < rows.len() {
                    if rows[i].values[c].is_some() {
                        prev = Some(i);
                        i += 1;
                        continue;
                    }
                    let lo = prev.expect("leading gaps were trimmed");
                    let hi = (i..rows.len())
                        .find(|&k| rows[k].values[c].is_some())
                        .expect("trailing gaps were trimmed");
                    let (t0, v0) = (rows[lo].ts as f64, rows[lo].values[c].unwrap());
                    let (t1, v1) = (rows[hi].ts as f64, rows[hi].values[c].unwrap());
                    for row in rows.iter_mut().take(hi).skip(i) {
                        let frac = (row.ts as f64 - t0) / (t1 - t0);
                        row.values[c] = Some(v0 + (v1 - v0) * frac);
                        col.interpolated += 1;
                    }
                    i = hi;
                }
            }
        }
    }
    if rows.len() < 2 {
        return Err(Error::EmptyAfterFilter);
    }

    let mut missing_hours = 0;
    let mut longest_gap_hours = 0;
    for w in rows.windows(2) {
        let step = (w[1].ts - w[0].ts) / 3600;
        if step > 1 {
            missing_hours += step - 1;
            longest_gap_hours = longest_gap_hours.max(step - 1);
        }
    }

    let n = rows.len();
    let q = spec.covariates.len();
    let p = spec.outputs.len();
    let covariates = Array2::from_shape_fn((n, q), |(i, k)| rows[i].values[k].unwrap());
    let outputs = Array2::from_shape_fn((n, p), |(i, j)| rows[i].values[q + j].unwrap());
    let timestamps: Vec<i64> = rows.iter().map(|r| r.ts).collect();
    let data = Dataset::new(
        covariates,
        outputs,
        Some(timestamps),
        spec.covariates.clone(),
        spec.outputs.clone(),
    )?;
    let report = GapReport {
        rows_read,
        rows_in_window,
        leading_dropped,
        trailing_dropped,
        interior_dropped,
        rows_kept: n,
        columns,
        missing_hours,
        longest_gap_hours,
        warnings,
    };
    Ok((data, report))
}

/// Writes a dataset in the same layout [`ingest`] reads. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let ts = data
        .timestamps()
        .ok_or_else(|| Error::invalid("dataset has no timestamps"))?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    header.extend(data.output_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![format_timestamp(ts[i])];
        rec.extend(data.z(i).iter().map(|v| v.to_string()));
        rec.extend(data.x(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
