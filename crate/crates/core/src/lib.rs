//! Co-simulation of adaptive split federated learning over an OFDMA uplink.
//!
//! A round picks a cut position, a resource-block count per client and a
//! transmit power per client, then charges delay and energy for migrating
//! layers, uploading activations, and returning gradients. Decisions come
//! from a drift-plus-penalty controller solved by block coordinate descent.
//! A small dense network trains alongside so the model-discrepancy objective
//! is measured on real weights.

pub mod coordinator;
pub mod cost;
pub mod error;
pub mod harness;
pub mod instances;
pub mod learner;
pub mod lyapunov;
pub mod objective;
pub mod par;
pub mod power_solver;
pub mod radio;
pub mod rb_solver;
pub mod scenario;
pub mod special;

pub use error::{Error, Result};
