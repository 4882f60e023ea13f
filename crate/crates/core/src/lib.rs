//! Finite-time training of neural networks as a Lyapunov control problem.
//!
//! The training loss `E = Σ |e_m|^(α+1)/(α+1)` doubles as a Lyapunov
//! function and weight rates are chosen as control inputs so that `E`
//! obeys `dE/dt ≤ -c E^β` with `β < 1`. That inequality yields an a priori
//! settling time, which [`bounds`] computes and checks along trajectories
//! produced by [`dynamics`].
//!
//! Module map:
//! - [`net`]: from-scratch MLP with embedded biases and the δ recursion.
//! - [`loss`]: Lyapunov loss, L1/L2 baselines, `sgnpow`.
//! - [`control`]: single-neuron, multi-layer and gradient-flow weight-rate laws.
//! - [`dynamics`]: Euler/RK4 theory flow, per-sample epoch flow, settle detection.
//! - [`bounds`]: settling-time bounds, γ estimation, decrease verification.
//! - [`perturb`]: admissible input perturbations and robustness runs.
//! - [`data`]: CSV ingestion, normalization, split, synthetic generators.
//! - [`config`], [`experiment`], [`svg`]: the command-line experiment driver.

pub mod bounds;
pub mod config;
pub mod control;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod kv;
pub mod loss;
pub mod matrix;
pub mod net;
pub mod perturb;
pub mod svg;

pub use error::{Error, Result};
