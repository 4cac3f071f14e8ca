//! Clipped-surrogate PPO update with analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam};
use super::mlp::Cache;
use super::net::{gaussian_entropy, squashed_log_prob, PolicyParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub total_steps: usize,
    pub hidden: Vec<usize>,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 3e-4,
            rollout_len: 1024,
            epochs: 4,
            minibatch: 64,
            total_steps: 20_000,
            hidden: vec![64, 64],
            vf_coef: 0.5,
            ent_coef: 0.01,
            max_grad_norm: 0.5,
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.clip > 0.0) {
            return bad(format!("clip = {} must be > 0", self.clip));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} must be in (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda = {} must be in [0, 1]", self.gae_lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be > 0", self.lr));
        }
        if self.rollout_len == 0 || self.epochs == 0 || self.minibatch == 0 {
            return bad("rollout_len, epochs and minibatch must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if !(self.vf_coef >= 0.0 && self.ent_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("vf_coef, ent_coef must be >= 0 and max_grad_norm > 0".into());
        }
        Ok(())
    }
}

/// One transition prepared for the update.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    /// Pre-squash action.
    pub z: f64,
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    /// `-mean(ρA)`, the surrogate before clipping.
    pub unclipped_policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Total loss and its gradient with respect to [`PolicyParams::params`].
pub fn loss_and_gradients(policy: &PolicyParams, batch: &[Sample], cfg: &PpoConfig) -> Result<(LossStats, Vec<f64>)> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    batch_loss(policy, batch, &idx, cfg)
}

fn batch_loss(
    policy: &PolicyParams,
    samples: &[Sample],
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<(LossStats, Vec<f64>)> {
    if idx.is_empty() {
        return Err(Error::Validation("empty minibatch".into()));
    }
    let n = idx.len() as f64;
    let na = policy.actor.num_params();
    let mut grad = vec![0.0; policy.num_params()];
    let (ga, rest) = grad.split_at_mut(na);
    let (gls, gc) = rest.split_at_mut(1);
    let ls = policy.log_std;
    let var = (2.0 * ls).exp();
    let mut cache = Cache::default();
    let mut s = LossStats::default();

    for &i in idx {
        let smp = &samples[i];
        let mean = policy.actor.forward_cached(&smp.obs, &mut cache)[0];
        let lp = squashed_log_prob(smp.z, mean, ls);
        let ratio = (lp - smp.log_prob).exp();
        let adv = smp.advantage;
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        s.policy_loss -= unclipped.min(clipped) / n;
        s.unclipped_policy_loss -= unclipped / n;
        s.approx_kl += (smp.log_prob - lp) / n;
        if (ratio - 1.0).abs() > cfg.clip {
            s.clip_fraction += 1.0 / n;
        }
        if unclipped <= clipped {
            let diff = smp.z - mean;
            let d_mean = -adv * ratio * diff / var / n;
            let d_ls = -adv * ratio * (diff * diff / var - 1.0) / n;
            policy.actor.backward(&cache, &[d_mean], ga);
            gls[0] += d_ls;
        }

        let v = policy.critic.forward_cached(&smp.obs, &mut cache)[0];
        let err = v - smp.ret;
        s.value_loss += err * err / n;
        policy.critic.backward(&cache, &[cfg.vf_coef * 2.0 * err / n], gc);
    }
    s.entropy = gaussian_entropy(ls);
    gls[0] -= cfg.ent_coef;
    s.total = s.policy_loss + cfg.vf_coef * s.value_loss - cfg.ent_coef * s.entropy;

    if !s.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite PPO loss (policy {}, value {}, entropy {})",
            s.policy_loss, s.value_loss, s.entropy
        )));
    }
    Ok((s, grad))
}

/// Run `epochs` passes of shuffled minibatch updates. On a non-finite loss
/// the policy and optimizer are restored to their state before the call.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut PolicyParams,
    samples: &[Sample],
    cfg: &PpoConfig,
    adam: &mut Adam,
    rng: &mut R,
) -> Result<LossStats> {
    if samples.is_empty() {
        return Err(Error::Validation("no samples for PPO update".into()));
    }
    let snapshot = (policy.clone(), adam.clone());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut mean = LossStats::default();
    let mut batches = 0.0;
    let mut params = policy.params();

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let (stats, mut grad) = match batch_loss(policy, samples, chunk, cfg) {
                Ok(v) => v,
                Err(e) => {
                    *policy = snapshot.0;
                    *adam = snapshot.1;
                    return Err(e);
                }
            };
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut params, &grad);
            policy.set_params(&params);
            // keep the optimizer's copy consistent with the clamped log-std
            params[policy.actor.num_params()] = policy.log_std;
            accumulate(&mut mean, &stats);
            batches += 1.0;
        }
    }
    scale(&mut mean, 1.0 / batches);
    Ok(mean)
}

fn accumulate(acc: &mut LossStats, s: &LossStats) {
    acc.total += s.total;
    acc.policy_loss += s.policy_loss;
    acc.unclipped_policy_loss += s.unclipped_policy_loss;
    acc.value_loss += s.value_loss;
    acc.entropy += s.entropy;
    acc.clip_fraction += s.clip_fraction;
    acc.approx_kl += s.approx_kl;
}

fn scale(acc: &mut LossStats, f: f64) {
    acc.total *= f;
    acc.policy_loss *= f;
    acc.unclipped_policy_loss *= f;
    acc.value_loss *= f;
    acc.entropy *= f;
    acc.clip_fraction *= f;
    acc.approx_kl *= f;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_batch(policy: &PolicyParams, seed: u64, n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let obs = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let a = policy.sample_action(&obs, &mut rng);
                Sample {
                    obs,
                    z: a.z,
                    log_prob: a.log_prob + rng.random_range(-0.3..0.3),
                    advantage: rng.random_range(-1.0..1.0),
                    ret: rng.random_range(-1.0..1.0),
                }
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = PpoConfig::default();
        let mut policy = PolicyParams::new(2, &[3], -0.3, 5).unwrap();
        assert!(policy.num_params() <= 50);
        let batch = toy_batch(&policy, 8, 12);
        let (_, grad) = loss_and_gradients(&policy, &batch, &cfg).unwrap();
        let p0 = policy.params();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] = p0[i] + h;
            policy.set_params(&p);
            let up = loss_and_gradients(&policy, &batch, &cfg).unwrap().0.total;
            p[i] = p0[i] - h;
            policy.set_params(&p);
            let down = loss_and_gradients(&policy, &batch, &cfg).unwrap().0.total;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_advantage_leaves_actor_to_entropy() {
        let cfg = PpoConfig::default();
        let policy = PolicyParams::new(2, &[3], 0.0, 1).unwrap();
        let mut batch = toy_batch(&policy, 2, 10);
        batch.iter_mut().for_each(|s| s.advantage = 0.0);
        let (stats, grad) = loss_and_gradients(&policy, &batch, &cfg).unwrap();
        let na = policy.actor.num_params();
        assert!(grad[..na].iter().all(|&g| g == 0.0));
        assert_eq!(grad[na], -cfg.ent_coef);
        assert_eq!(stats.policy_loss, 0.0);
    }

    #[test]
    fn ratio_is_one_at_collection() {
        let cfg = PpoConfig::default();
        let policy = PolicyParams::new(2, &[3], 0.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<Sample> = (0..32)
            .map(|i| {
                let obs = vec![i as f64 / 32.0, 0.5];
                let a = policy.sample_action(&obs, &mut rng);
                Sample { obs, z: a.z, log_prob: a.log_prob, advantage: (i as f64 - 16.0) / 8.0, ret: 0.0 }
            })
            .collect();
        let (stats, _) = loss_and_gradients(&policy, &batch, &cfg).unwrap();
        assert!((stats.policy_loss - stats.unclipped_policy_loss).abs() < 1e-6);
        assert_eq!(stats.clip_fraction, 0.0);
    }

    #[test]
    fn non_finite_loss_restores_policy() {
        let cfg = PpoConfig::default();
        let mut policy = PolicyParams::new(2, &[3], 0.0, 3).unwrap();
        let before = policy.clone();
        let mut batch = toy_batch(&policy, 4, 8);
        batch[5].ret = f64::NAN;
        let mut adam = Adam::new(policy.num_params(), cfg.lr);
        let err = ppo_update(&mut policy, &batch, &cfg, &mut adam, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Numerical(_))));
        assert_eq!(policy, before);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        for cfg in [
            PpoConfig { clip: 0.0, ..Default::default() },
            PpoConfig { gamma: 0.0, ..Default::default() },
            PpoConfig { gamma: 1.2, ..Default::default() },
            PpoConfig { gae_lambda: -0.1, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
