//! Multilayer stochastic spiking networks trained to emit precisely timed
//! output spike patterns.
//!
//! Neurons follow a spike response model with exponential escape noise. Output
//! weights follow the gradient of the log-likelihood of the target spike
//! trains; hidden weights receive the same error signals propagated back
//! through the output weights and a double-convolution eligibility trace.
//!
//! Module map:
//! - [`kernels`]: PSP/reset kernels and exact exponential traces.
//! - [`neuron`]: membrane potential, escape rate, spike sampling.
//! - [`network`]: layered network container and episode simulation.
//! - [`learning`]: likelihood, weight-update rules, synaptic scaling, bio variant.
//! - [`metrics`]: van Rossum distance, classification, moving averages.
//! - [`patterns`]: input/target generation and pattern-set files.
//! - [`harness`]: experiment presets, runner, CSV/manifest emission.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod kernels;
pub mod learning;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod neuron;
pub mod patterns;
pub mod spikes;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use spikes::SpikeTrain;

/// Simulation time step in ms.
pub const DEFAULT_DT: f64 = 1.0;
/// Episode duration in ms.
pub const DEFAULT_DURATION: f64 = 500.0;
