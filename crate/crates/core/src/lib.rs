//! Conditional covariance and correlation estimation for multivariate system
//! outputs given environmental covariates.
//!
//! Two estimators share the same standardized residuals: a Nadaraya-Watson
//! kernel smoother ([`kernel`]) and a covariance-regression random forest
//! ([`forest`]). [`sim`] holds the Monte Carlo generator and benchmark,
//! [`shm`] the monitoring-data pipeline behind the `condcov` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod forest;
pub mod kernel;
pub mod linalg;
pub mod method;
pub mod shm;
pub mod sim;

pub use data::{Dataset, GridAxis, QueryGrid};
pub use error::{Error, Result};
pub use linalg::{cov_to_corr, euclidean_dist, sample_cov, SymMatrix};
pub use method::Method;
