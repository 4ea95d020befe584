//! Gaussian-process Bayesian optimization with Joint Entropy Search.
//!
//! The crate is organized bottom-up:
//!
//! - [`gauss`]: scalar Gaussian utilities, truncated moments and a Monte Carlo
//!   entropy reference for Gaussian-plus-truncated-Gaussian sums.
//! - [`gp`]: squared-exponential ARD Gaussian process regression with a
//!   growable Cholesky factor, and [`hyper`] for marginal-likelihood fitting.
//! - [`search`]: box bounds, scrambled Sobol grids and derivative-free local
//!   refinement shared by every inner maximization.
//! - [`sampler`]: random Fourier feature sample paths and approximate
//!   Thompson sampling of optimum location/value pairs.
//! - [`acquisition`]: JES, MES and EI.
//! - [`engine`]: the outer optimization loop.
//! - [`benchmarks`]: GP-sample tasks, synthetic test functions and regrets.

pub mod acquisition;
pub mod benchmarks;
pub mod engine;
pub mod error;
pub mod gauss;
pub mod gp;
pub mod hyper;
pub mod rng;
pub mod sampler;
pub mod search;

pub use error::{Error, Result};
