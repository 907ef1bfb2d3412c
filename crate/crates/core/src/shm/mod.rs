//! Monitoring-data pipeline: CSV ingestion with gap handling, grid
//! construction with support masking, and export of conditional covariance
//! and correlation surfaces.

mod export;
mod grid;
mod ingest;

pub use export::{
    evaluate_grid, fit_and_export, grid_columns, read_grid_points, replay, write_grid,
    EstimatorParams, FitConfig, FittedModel, GridResult, GridSpec, RunManifest, FORMAT_VERSION,
    GRID_CSV, GRID_FORMAT, GRID_META, MANIFEST, MANIFEST_FORMAT,
};
pub use grid::{auto_grid, convex_hull, in_hull, support_mask, DEFAULT_RESOLUTION, NN_MASK_QUANTILE};
pub use ingest::{
    format_timestamp, ingest, parse_timestamp, write_dataset_csv, ColumnGaps, GapReport,
    IngestSpec, MissingPolicy, TIMESTAMP_FORMAT,
};
