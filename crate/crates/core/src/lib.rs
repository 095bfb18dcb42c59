//! Offline reinforcement learning with sparse q-Gaussian policies.
//!
//! A heavy-tailed proposal policy is fitted to logged actions with truncating
//! q-exponential advantage weights; a sparse actor then inherits its mean and
//! learns its scale by minimizing a reverse-KL estimator against the proposal.
//! The actor only ever evaluates densities at its own samples, so logged
//! actions outside its support never produce an undefined log-likelihood.

pub mod config;
pub mod critic;
pub mod dataset;
pub mod deformed;
pub mod env;
pub mod error;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod policy;
pub mod qgaussian;
pub mod trainer;

pub use deformed::{exp_q, ln_q, EntropicIndex};
pub use config::{Algorithm, ExperimentConfig};
pub use error::{Error, Result};
pub use policy::{PolicySpec, QGaussianPolicy};
pub use qgaussian::{QGaussian1D, QGaussianProduct};
