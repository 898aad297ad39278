//! Simulation and analysis of pump-probe experiments on tunneling-split
//! rotational doublets: level graph, pulses, density-matrix propagation,
//! FID synthesis, spectral analysis and scan harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod config;
pub mod dsp;
pub mod error;
pub mod level_system;
pub mod propagator;
pub mod pulse;
pub mod scan;
pub mod signal;

pub use error::{Error, Result};
