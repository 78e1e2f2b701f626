//! Attention readouts over a 2-D diffusion reservoir.
//!
//! The crate covers the whole experimental loop:
//!
//! - [`dynsys`]: the eight chaotic benchmark generators, resampling,
//!   standardization and the one-step-ahead dataset.
//! - [`reservoir`]: explicit finite-difference diffusion with Gaussian input
//!   injection, differentiable point sampling and snapshot files.
//! - [`neural`]: dense layers with manual backpropagation and Adam.
//! - [`models`]: linear readout, AERC, ASAERC and the delay-embedding MLP.
//! - [`train`]: mini-batch training and evaluation over precomputed snapshots.
//! - [`analysis`]: correlation statistics, query histograms, parameter
//!   tables and sensor-count sweeps.
//! - [`config`] and [`pipeline`]: declarative experiment runs with
//!   content-hash caching.

pub mod analysis;
pub mod config;
pub mod dynsys;
pub mod error;
pub mod hashing;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod reservoir;
pub mod train;

pub use error::{Error, Result};
