//! Simulation and analysis toolkit for federated learning when clients drop in
//! and out of training with heterogeneous, possibly time-varying probabilities.
//!
//! The crate is organised around the life of one simulated run:
//!
//! - [`objectives`]: local losses `F_i`, their gradients and stochastic oracles,
//!   plus a synthetic class-skewed classification task.
//! - [`availability`]: per-round participation probabilities, active-set sampling
//!   and last-active-round bookkeeping.
//! - [`mixing`]: the averaging matrix induced by an active set, consensus error
//!   and the spectral contraction bound.
//! - [`algorithms`]: FedAWE and the FedAvg/MIFA baselines as one-round
//!   transitions, and the multi-round trainer.
//! - [`diagnostics`]: the auxiliary sequence and the identities it satisfies.
//! - [`harness`]: configuration, presets, replication and result files.
//!
//! Monte Carlo estimators and sweeps run on rayon when the `parallel` feature is
//! enabled (the default) and fall back to plain iterators otherwise. Results are
//! bit-identical either way.

pub mod algorithms;
pub mod availability;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod mixing;
pub mod objectives;
pub mod par;
pub mod rng;
pub mod stats;
pub mod vector;

pub use error::{Result, SimError};
