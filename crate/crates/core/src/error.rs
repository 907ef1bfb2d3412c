use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("too few rows: need at least {needed}, found {found}")]
    TooFewRows { needed: usize, found: usize },

    #[error("non-positive diagonal entry {value} at index {index}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("kernel weight sum underflowed (query outside the support of the data)")]
    ZeroWeightSum,

    #[error("output column {column} is constant")]
    DegenerateColumn { column: usize },

    #[error("every bandwidth candidate produced an infinite loss")]
    AllCandidatesInfeasible,

    #[error("truth covariance is not positive semidefinite at row {row}")]
    CholeskyFailure { row: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no rows left after filtering")]
    EmptyAfterFilter,

    #[error("duplicate or non-monotone timestamp at line {line}")]
    NonMonotoneTimestamps { line: usize },

    #[error("unsupported grid: {0}")]
    UnsupportedGrid(String),

    #[error("at grid point {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-readable category used by the CLI and the C API.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension",
            Error::TooFewRows { .. } => "too-few-rows",
            Error::NonPositiveDiagonal { .. } => "non-positive-diagonal",
            Error::ZeroWeightSum => "zero-weight-sum",
            Error::DegenerateColumn { .. } => "degenerate-column",
            Error::AllCandidatesInfeasible => "infeasible",
            Error::CholeskyFailure { .. } => "cholesky",
            Error::InvalidInput(_) => "invalid-input",
            Error::Parse { .. } => "parse",
            Error::EmptyAfterFilter => "empty",
            Error::NonMonotoneTimestamps { .. } => "timestamps",
            Error::UnsupportedGrid(_) => "unsupported-grid",
            Error::GridPoint { source, .. } => source.category(),
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
