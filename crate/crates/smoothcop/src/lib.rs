//! Rank-based smooth empirical copulas and their resampling machinery.
//!
//! Given an `n x d` sample with continuous margins, the empirical copula of
//! a sub-stretch condenses the dependence between coordinates into a step
//! function of the within-window ranks. This crate implements a family of
//! *smooth* versions of that estimator, obtained by replacing each rank
//! indicator with a survival-function kernel, together with the inference
//! tools built on top of them:
//!
//! - [`data`]: samples, window ranks, pseudo-observations, Kendall's tau.
//! - [`models`]: Clayton, Gumbel-Hougaard and Frank copulas (sampling,
//!   distribution functions, exact partial derivatives) for experiments.
//! - [`smoothing`]: the smooth empirical copula with Dirac, binomial and
//!   beta-binomial kernels, plus the closed-form empirical beta copula.
//! - [`bootstrap`]: smooth-copula bootstrap draws and confidence intervals
//!   for Kendall's tau and the Frank parameter.
//! - [`multiplier`]: dependent-multiplier replicates of the (sequential)
//!   copula process and covariance / quantile estimation.
//! - [`derivatives`]: first-order partial-derivative estimators (finite
//!   differences, smoothed differences, Bernstein form) with adaptive
//!   bandwidth and degree rules.
//! - [`changepoint`]: a CUSUM-type test for changes in the copula of
//!   serially dependent observations, with multiplier-replicate p-values.
//! - [`experiments`]: deterministic Monte Carlo drivers behind the CLI.
//!
//! # Example
//!
//! ```
//! use smoothcop::data::{RankMatrix, Sample, Window};
//! use smoothcop::smoothing::{SmoothEmpiricalCopula, SmoothingFamily};
//!
//! let rows = vec![
//!     vec![0.3, 5.0],
//!     vec![-1.4, 3.3],
//!     vec![2.2, -2.0],
//!     vec![0.9, 0.4],
//! ];
//! let sample = Sample::new(rows)?;
//! let ranks = RankMatrix::from_window(&sample, Window::full(4))?;
//! let smooth = SmoothEmpiricalCopula::new(ranks, SmoothingFamily::Binomial)?;
//! let value = smooth.eval(&[0.5, 0.5])?;
//! assert!((0.0..=1.0).contains(&value));
//! # Ok::<(), smoothcop::Error>(())
//! ```

#![warn(missing_docs)]
#![warn(rustdoc::broken_intra_doc_links)]

pub mod bootstrap;
pub mod changepoint;
pub mod data;
pub mod derivatives;
mod error;
pub mod experiments;
pub mod models;
pub mod multiplier;
pub mod rng;
pub mod smoothing;

pub use error::{Error, Result};
