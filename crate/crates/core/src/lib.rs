//! Localization of a moving underwater acoustic source from TDOA/FDOA
//! measurements when the sound speed is unknown and the sensor positions and
//! velocities are only known up to Gaussian errors.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: geometry, noiseless measurement synthesis, sensor arrays.
//! - [`noise`]: covariance construction and seedable correlated sampling.
//! - [`crlb`]: hybrid Fisher information and Cramér–Rao bounds, including the
//!   known/unknown sound speed comparison.
//! - [`estimator`]: the two-stage weighted least squares estimator.
//! - [`analysis`]: small-noise efficiency diagnostics for the estimator.
//! - [`harness`]: Monte Carlo sweeps and MSE aggregation.
//! - [`config`]: scenario, measurement and report files.
//!
//! ```
//! use uwloc::config::Scenario;
//! use uwloc::estimator::{estimate, EstimatorOptions};
//! use uwloc::model::true_measurements;
//!
//! let scenario = Scenario::baseline();
//! let source = scenario.source_at_speed(1500.0).unwrap();
//! let array = scenario.sensor_array().unwrap();
//! let meas = true_measurements(&source, &array).unwrap();
//! let report = estimate(&meas, array.nominal(), None, &EstimatorOptions::structured()).unwrap();
//! assert!((report.position - source.position).norm() < 1e-6);
//! ```

// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod crlb;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod noise;

pub use error::{Error, Result, Stage};
