//! Actor-critic with a tanh-squashed Gaussian policy over `[0, 1]`.

use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::afferent::softplus;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Map a pre-squash sample to an action in `[0, 1]`.
pub fn squash(z: f64) -> f64 {
    (z.tanh() + 1.0) / 2.0
}

/// `ln(d action / d z)`, computed without forming `1 - tanh²`.
pub fn log_squash_jacobian(z: f64) -> f64 {
    LN_2 - 2.0 * z - 2.0 * softplus(-2.0 * z)
}

pub fn gaussian_log_density(z: f64, mean: f64, log_std: f64) -> f64 {
    let u = (z - mean) / log_std.exp();
    -0.5 * u * u - log_std - 0.5 * (2.0 * PI).ln()
}

/// Log density of the squashed action corresponding to `z`.
pub fn squashed_log_prob(z: f64, mean: f64, log_std: f64) -> f64 {
    gaussian_log_density(z, mean, log_std) - log_squash_jacobian(z)
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 + 0.5 * (2.0 * PI).ln() + log_std
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: f64,
    pub z: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: f64,
}

impl PolicyParams {
    pub fn new(obs_dim: usize, hidden: &[usize], init_log_std: f64, seed: u64) -> Result<Self> {
        if obs_dim == 0 {
            return Err(Error::Validation("observation dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let actor = Mlp::new(&sizes, 0.01, &mut rng);
        let critic = Mlp::new(&sizes, 1.0, &mut rng);
        Ok(Self { actor, critic, log_std: init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX) })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn mean(&self, obs: &[f64]) -> f64 {
        self.actor.forward(obs)[0]
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(obs)[0]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> ActionSample {
        let mean = self.mean(obs);
        let eps: f64 = rng.sample(StandardNormal);
        let z = mean + self.log_std.exp() * eps;
        ActionSample { action: squash(z), z, log_prob: squashed_log_prob(z, mean, self.log_std) }
    }

    pub fn deterministic_action(&self, obs: &[f64]) -> f64 {
        squash(self.mean(obs))
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.log_std)
    }

    pub fn num_actor_params(&self) -> usize {
        self.actor.num_params() + 1
    }

    pub fn num_params(&self) -> usize {
        self.num_actor_params() + self.critic.num_params()
    }

    /// Flat layout: actor weights, log-std, critic weights.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.actor.params();
        p.push(self.log_std);
        p.extend(self.critic.params());
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let na = self.actor.num_params();
        self.actor.set_params(&flat[..na]);
        self.log_std = flat[na].clamp(LOG_STD_MIN, LOG_STD_MAX);
        self.critic.set_params(&flat[na + 1..]);
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.log_std.is_finite()
    }
}
