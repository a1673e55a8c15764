//! Locally adaptive nonparametric regression with weighted cubic smoothing
//! splines.
//!
//! Each observation carries its own weight in
//! `Σ λ_i (y_i - g(t_i))² + ∫ g''²`. Weights start small (the fit is then
//! essentially the least-squares line) and are multiplied by `q` on every
//! interval of a dyadic multiscale family where the normalized residual sum
//! exceeds `σ √(τ ln n)`. The first fit with no such interval is returned.
//!
//! Modules:
//! - [`spline`]: the weighted smoothing spline solver (banded, `O(n)`) and
//!   the penalty quadratic form.
//! - [`multiscale`]: interval family, residual statistics, noise estimate,
//!   threshold calibration.
//! - [`adapt`]: the iterative weight adaptation (local and global branches).
//! - [`variants`]: running-median outlier cleaning and heteroscedastic scale
//!   fits with χ² interval bands.
//! - [`simulation`]: test signals, RISE/MRISE and the study harness.
//!
//! ```
//! use wss_core::{adapt, spline::Sample};
//!
//! let y: Vec<f64> = (1..=200)
//!     .map(|i| {
//!         let t = i as f64 / 200.0;
//!         (6.0 * t).sin() + 0.05 * ((i * 7919 % 13) as f64 - 6.0) / 6.0
//!     })
//!     .collect();
//! let sample = Sample::equispaced(y).unwrap();
//! let report = adapt::fit(&sample, &adapt::AdaptConfig::default()).unwrap();
//! assert!(report.pass);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapt;
pub mod banded;
pub mod error;
pub mod exec;
pub mod multiscale;
pub mod simulation;
pub mod spline;
pub mod variants;

pub use adapt::{fit, fit_global, fit_local, AdaptConfig, Branch, FitReport, SigmaMode};
pub use error::{Error, Result};
pub use exec::Execution;
pub use multiscale::{dyadic_family, in_region, sigma_hat, Interval, IntervalFamily, RegionSpec};
pub use spline::{build_penalty, solve_weighted, Order, Sample, SplineFit, WeightVector};
pub use variants::{clean_outliers, robust_fit, scale_fit, ScaleRegionSpec};
