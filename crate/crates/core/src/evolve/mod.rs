//! Outer-loop search over afferent genomes.

pub mod cmaes;
pub mod fitness;
pub mod probe;

pub use cmaes::{EvolutionState, StrategyParams, TellReport};
pub use fitness::{
    evaluate_fitness, run_evolution, score, try_evaluate_fitness, EvolutionConfig, EvolutionResult, FitnessContext,
    FitnessSpec, GenerationStats,
};
pub use probe::{lipschitz_probe, ProbeConfig, ProbeReport};
