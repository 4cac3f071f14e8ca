//! Empirical local Lipschitz constant of a fitness function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::afferent::Genome;
use crate::error::{Error, Result};
use crate::predictive::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n_pairs: usize,
    pub radius: f64,
    pub pert_sd: f64,
    pub quantile: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { n_pairs: 100, radius: 0.1, pert_sd: 0.01, quantile: 0.95, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub constant: f64,
    pub accepted: usize,
    pub ratios: Vec<f64>,
}

/// Ratios `|J(φ) − J(φ')| / ‖φ − φ'‖` over Gaussian perturbations inside
/// `radius`, summarized by their upper quantile.
pub fn lipschitz_probe<F: FnMut(&Genome) -> f64>(
    genome: &Genome,
    mut fitness: F,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let normal = Normal::new(0.0, cfg.pert_sd).map_err(|e| Error::Config(format!("pert_sd: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = fitness(genome);
    let mut ratios = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let u: Vec<f64> = (0..genome.dim()).map(|_| normal.sample(&mut rng)).collect();
        let dist = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dist > cfg.radius || dist == 0.0 {
            continue;
        }
        let raw = genome.raw.iter().zip(&u).map(|(a, b)| a + b).collect();
        let other = Genome::new(raw, genome.m, genome.k)?;
        ratios.push((base - fitness(&other)).abs() / dist);
    }
    let constant = quantile(&ratios, cfg.quantile)
        .ok_or_else(|| Error::Validation("no perturbation pairs fell inside the radius".into()))?;
    Ok(ProbeReport { constant, accepted: ratios.len(), ratios })
}
