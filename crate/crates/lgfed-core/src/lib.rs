//! Core algorithms for local-global federated learning at desk scale.
//!
//! Everything in this crate is pure in-memory computation: a dense
//! feed-forward network engine with exact manual gradients, the round-based
//! federation simulator (FedAvg, local-global split training, local-only and
//! mean-regularized MTL baselines), a linear teacher-student laboratory with
//! closed-form and Monte-Carlo generalization errors, non-iid partitioning,
//! and adversarial fair-representation training.
//!
//! The crate is `no_std` (alloc required). File formats, the CLI, and thread
//! pools live in the companion `lgfed` crate; parallel execution is injected
//! through the [`exec::TaskPool`] trait so results never depend on thread
//! count.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod exec;
pub mod fair;
pub mod fed;
pub mod linear;
pub mod mat;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use mat::Mat;
