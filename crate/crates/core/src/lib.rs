//! Power-grid state estimation under false-data injection, with neural
//! state correction.
//!
//! The crate covers the full loop:
//!
//! - [`grid`] — network model, bus admittance matrix, measurement function
//!   `h(x)` and its Jacobian `H(x)`;
//! - [`powerflow`] — Newton–Raphson AC power flow producing ground-truth
//!   state trajectories from load profiles;
//! - [`estimation`] — DC and AC weighted-least-squares estimators plus
//!   chi-square bad-data detection;
//! - [`attack`] — stealthy measurement attacks that move the estimate
//!   without disturbing the detection residual;
//! - [`dataset`] — sliding-window training corpora (normal history plus an
//!   attacked final state) with temporal splits and z-score normalization;
//! - [`neural`] — an LSTM denoising autoencoder (encoder, repeat-vector
//!   bridge, decoder, time-distributed head) trained from scratch;
//! - [`pipeline`] — the online correction loop with a corrected-state
//!   feedback queue and threshold-based identification of attacked states.

pub mod attack;
pub mod dataset;
pub mod estimation;
pub mod grid;
pub mod neural;
pub mod pipeline;
pub mod powerflow;

pub use grid::{Branch, Bus, BusKind, MeasurementKind, NetworkModel, StateVector};
