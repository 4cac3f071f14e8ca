//! Experiment driver for evolved afferent sensing: simulation, training,
//! evolution, evaluation and ablations, with JSONL/CSV/JSON outputs.

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod runner;

pub use config::{Ablation, ExperimentConfig};
pub use error::{HarnessError, Result};
