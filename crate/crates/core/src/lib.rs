//! Supervised pre-training of a small decoder-only transformer to act in
//! operations-management decision problems, with the simulators, posterior
//! oracles and benchmark policies needed to train and evaluate it.

pub mod baselines;
#[cfg(feature = "cli")]
pub mod cli;
pub mod dataset;
pub mod domain;
pub mod envs;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod repro;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
