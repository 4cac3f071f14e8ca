//! Evolved afferent sensing for damage-aware reinforcement learning.
//!
//! A genome parameterizes an array of leaky-integrator afferents whose
//! combined activation (CAT) acts as an internal risk signal. An inner PPO
//! learner trains behavior against a fixed array, and CMA-ES searches over
//! arrays by scoring the policies they produce.

pub mod afferent;
pub mod env;
pub mod error;
pub mod evolve;
pub mod memory;
pub mod policy;
pub mod predictive;
pub mod rng;
pub mod task;

pub use error::{Error, Result};
