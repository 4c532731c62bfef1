//! Federated-learning simulator with active-forgetting unlearning.
//!
//! The crate simulates FedAvg training across clients, then removes one
//! class of one client from the converged global model by continued
//! training on manipulated data: a teacher ensemble of untrained models
//! generates knowledge-free fake labels (debiased against initialization
//! bias), and an elastic-weight-consolidation penalty anchored at the
//! client's converged parameters keeps the non-target knowledge intact.
//! A backdoor-attack harness audits how completely the target data's
//! influence is gone, against retrain and conventional-loss baselines.
//!
//! Everything is `f64`, seeded, and deterministic: the same configuration
//! and seed reproduce a run bit for bit, regardless of thread scheduling.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod linalg;
pub mod nn;
pub mod seed;
pub mod unlearning;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use nn::{Batch, ModelSpec, ParamVector};
