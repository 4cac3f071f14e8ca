//! Rollout collection, the training loop and policy evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::gae::gae;
use super::net::PolicyParams;
use super::obs::ObsMode;
use super::ppo::{ppo_update, LossStats, PpoConfig, Sample};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Diagnostics reported by an environment alongside each step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub cat: f64,
    pub delta_d: f64,
    pub task_reward: f64,
    pub y_hat: f64,
    pub d_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    /// Restart the episode seed sequence; episode `i` after this call uses a
    /// seed derived from `(seed, i)`.
    fn set_seed(&mut self, seed: u64);
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: f64) -> Result<EnvStep>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub mean_task_reward: f64,
    pub mean_cat: f64,
    pub mean_delta_d: f64,
    pub mean_action: f64,
    pub loss: LossStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub history: Vec<IterationStats>,
}

pub fn init_policy(obs_dim: usize, cfg: &PpoConfig, seed: u64) -> Result<PolicyParams> {
    PolicyParams::new(obs_dim, &cfg.hidden, cfg.init_log_std, derive_seed(seed, 10))
}

/// Train a freshly initialized policy for `cfg.total_steps` environment steps.
pub fn rl_train<E: Environment + ?Sized>(env: &mut E, cfg: &PpoConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let policy = init_policy(env.obs_dim(), cfg, seed)?;
    train_policy(env, policy, cfg, seed)
}

/// Continue training `policy`. With `total_steps == 0` it is returned unchanged.
pub fn train_policy<E: Environment + ?Sized>(
    env: &mut E,
    mut policy: PolicyParams,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if policy.obs_dim() != env.obs_dim() {
        return Err(Error::Validation(format!(
            "policy expects {} inputs, environment emits {}",
            policy.obs_dim(),
            env.obs_dim()
        )));
    }
    let mut history = Vec::new();
    if cfg.total_steps == 0 {
        return Ok(TrainOutcome { policy, history });
    }
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12));
    let mut adam = Adam::new(policy.num_params(), cfg.lr);
    env.set_seed(derive_seed(seed, 13));
    let mut obs = env.reset()?;
    let mut steps = 0;

    while steps < cfg.total_steps {
        let len = cfg.rollout_len.min(cfg.total_steps - steps);
        let mut samples = Vec::with_capacity(len);
        let mut rewards = Vec::with_capacity(len);
        let mut values = Vec::with_capacity(len + 1);
        let mut dones = Vec::with_capacity(len);
        let mut it = IterationStats { iteration: history.len(), ..Default::default() };

        for _ in 0..len {
            let a = policy.sample_action(&obs, &mut act_rng);
            values.push(policy.value(&obs));
            let step = env.step(a.action)?;
            rewards.push(step.reward);
            dones.push(step.done);
            it.mean_reward += step.reward;
            it.mean_task_reward += step.info.task_reward;
            it.mean_cat += step.info.cat;
            it.mean_delta_d += step.info.delta_d;
            it.mean_action += a.action;
            samples.push(Sample {
                obs: std::mem::take(&mut obs),
                z: a.z,
                log_prob: a.log_prob,
                advantage: 0.0,
                ret: 0.0,
            });
            obs = if step.done { env.reset()? } else { step.obs };
        }
        values.push(policy.value(&obs));
        let (adv, ret) = gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda);
        for (s, (a, r)) in samples.iter_mut().zip(adv.into_iter().zip(ret)) {
            s.advantage = a;
            s.ret = r;
        }
        it.loss = ppo_update(&mut policy, &samples, cfg, &mut adam, &mut batch_rng)?;
        steps += len;
        let n = len as f64;
        it.steps = steps;
        it.mean_reward /= n;
        it.mean_task_reward /= n;
        it.mean_cat /= n;
        it.mean_delta_d /= n;
        it.mean_action /= n;
        history.push(it);
    }
    Ok(TrainOutcome { policy, history })
}

/// Per-step record of one evaluation episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub episode: usize,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub info: Vec<StepInfo>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<Vec<f64>>,
}

impl EpisodeTrace {
    pub fn task_return(&self) -> f64 {
        self.info.iter().map(|i| i.task_reward).sum()
    }

    pub fn mean_task_reward(&self) -> f64 {
        if self.info.is_empty() {
            0.0
        } else {
            self.task_return() / self.info.len() as f64
        }
    }

    pub fn damage_total(&self) -> f64 {
        self.info.iter().map(|i| i.delta_d).sum()
    }

    pub fn mean_cat(&self) -> f64 {
        if self.info.is_empty() {
            0.0
        } else {
            self.info.iter().map(|i| i.cat).sum::<f64>() / self.info.len() as f64
        }
    }
}

/// Roll out `policy` with sampled actions for `episodes` episodes per seed.
pub fn evaluate<E: Environment + ?Sized>(
    env: &mut E,
    policy: &PolicyParams,
    seeds: &[u64],
    episodes: usize,
    record_obs: bool,
) -> Result<Vec<EpisodeTrace>> {
    let mut out = Vec::with_capacity(seeds.len() * episodes);
    for &seed in seeds {
        env.set_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 21));
        for episode in 0..episodes {
            let mut trace = EpisodeTrace { seed, episode, ..Default::default() };
            let mut obs = env.reset()?;
            loop {
                let a = policy.sample_action(&obs, &mut rng);
                let step = env.step(a.action)?;
                if record_obs {
                    trace.observations.push(std::mem::take(&mut obs));
                }
                trace.actions.push(a.action);
                trace.rewards.push(step.reward);
                trace.info.push(step.info);
                if step.done {
                    break;
                }
                obs = step.obs;
            }
            out.push(trace);
        }
    }
    Ok(out)
}

/// Serialized policy with enough context to rebuild its observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub policy: PolicyParams,
    pub obs_layout: ObsMode,
    pub config: PpoConfig,
}

/// One-step bandit with reward `-|action - target|`.
#[derive(Debug, Clone)]
pub struct Bandit {
    pub target: f64,
    pub episode_len: usize,
    t: usize,
}

impl Bandit {
    pub fn new(target: f64, episode_len: usize) -> Self {
        Self { target, episode_len: episode_len.max(1), t: 0 }
    }
}

impl Environment for Bandit {
    fn obs_dim(&self) -> usize {
        1
    }

    fn set_seed(&mut self, _seed: u64) {}

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.t = 0;
        Ok(vec![1.0])
    }

    fn step(&mut self, action: f64) -> Result<EnvStep> {
        self.t += 1;
        let reward = -(action - self.target).abs();
        let info = StepInfo { task_reward: reward, ..Default::default() };
        Ok(EnvStep { obs: vec![1.0], reward, done: self.t >= self.episode_len, info })
    }
}
