//! The knee twin wrapped as a learning environment: loads pass through the
//! afferent array (and optionally the predictive channel and episodic
//! memory) before reaching the policy and the shaped reward.

use serde::{Deserialize, Serialize};

use crate::afferent::AfferentArray;
use crate::env::{self, EnvState, ScenarioConfig, FEATURES, MIN_AGE};
use crate::error::{Error, Result};
use crate::memory::{MemoryConfig, MemoryStore, StepRecord};
use crate::policy::{
    build_observation, shaped_reward, EnvStep, Environment, ObsInputs, ObsMode, RewardParams, StepInfo,
};
use crate::predictive::{PredictiveChannel, Transition};
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub scenario: ScenarioConfig,
    pub age: f64,
    pub episode_len: usize,
    pub obs_mode: ObsMode,
    pub reward: RewardParams,
    /// Episodic memory; `None` disables capture and recall.
    pub memory: Option<MemoryConfig>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            age: 60.0,
            episode_len: 200,
            obs_mode: ObsMode::Epi,
            reward: RewardParams::default(),
            memory: Some(MemoryConfig::default()),
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.reward.validate()?;
        if self.episode_len == 0 {
            return Err(Error::Config("episode_len must be positive".into()));
        }
        if let Some(m) = &self.memory {
            m.validate()?;
        }
        Ok(())
    }
}

/// Settings for fitting the predictive channel on healthy rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictiveConfig {
    pub enabled: bool,
    pub kappa: f64,
    pub delta0_quantile: f64,
    pub lambda_env: f64,
    pub lambda_pred: f64,
    /// Per-feature discrepancy weights; empty means all ones.
    pub w_delta: Vec<f64>,
    pub fit_samples: usize,
    pub fit_age: f64,
    pub fit_seed: u64,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kappa: 10.0,
            delta0_quantile: 0.95,
            lambda_env: 1.0,
            lambda_pred: 1.0,
            w_delta: Vec::new(),
            fit_samples: 2000,
            fit_age: MIN_AGE,
            fit_seed: 0x5afe,
        }
    }
}

/// Transitions of the normal scenario under uniformly random actions.
pub fn healthy_transitions(cfg: &PredictiveConfig, episode_len: usize) -> Result<Vec<Transition>> {
    let scenario = ScenarioConfig::default();
    let mut out = Vec::with_capacity(cfg.fit_samples);
    let mut episode = 0u64;
    while out.len() < cfg.fit_samples {
        let seed = derive_seed(cfg.fit_seed, episode);
        let mut state = env::reset(&scenario, cfg.fit_age, seed)?;
        for t in 0..episode_len {
            if out.len() == cfg.fit_samples {
                break;
            }
            let action = rng::uniform(seed, t as u64, 7);
            let (next, res) = env::step(&state, action, &scenario, episode_len);
            out.push(Transition {
                x: state.x.to_vec(),
                action,
                context: env::context(next.t).to_vec(),
                x_next: res.x_next.to_vec(),
            });
            state = next;
        }
        episode += 1;
    }
    Ok(out)
}

/// Fit and calibrate the predictive channel, or `None` when disabled.
pub fn fit_predictive(cfg: &PredictiveConfig, episode_len: usize) -> Result<Option<PredictiveChannel>> {
    if !cfg.enabled {
        return Ok(None);
    }
    let transitions = healthy_transitions(cfg, episode_len)?;
    let w = if cfg.w_delta.is_empty() { vec![1.0; FEATURES] } else { cfg.w_delta.clone() };
    PredictiveChannel::calibrate(&transitions, w, cfg.kappa, cfg.delta0_quantile, cfg.lambda_env, cfg.lambda_pred)
        .map(Some)
}

#[derive(Debug, Clone)]
pub struct AfferentTask {
    cfg: TaskConfig,
    array: AfferentArray,
    predictive: Option<PredictiveChannel>,
    memory: Option<MemoryStore>,
    state: Option<EnvState>,
    seed: u64,
    episode: u64,
}

impl AfferentTask {
    pub fn new(cfg: TaskConfig, array: AfferentArray, predictive: Option<PredictiveChannel>) -> Result<Self> {
        cfg.validate()?;
        if array.k() != FEATURES {
            return Err(Error::Validation(format!("afferents expect k={}, the twin emits {FEATURES}", array.k())));
        }
        let memory = cfg.memory.clone().map(MemoryStore::new).transpose()?;
        Ok(Self { cfg, array, predictive, memory, state: None, seed: 0, episode: 0 })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn array(&self) -> &AfferentArray {
        &self.array
    }

    pub fn memory(&self) -> Option<&MemoryStore> {
        self.memory.as_ref()
    }

    pub fn has_predictive(&self) -> bool {
        self.predictive.is_some()
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Sense `x`: update afferents, blend in the predictive signal, apply the
    /// optional memory bias.
    fn sense(&mut self, x: &[f64]) -> Result<f64> {
        let c_env = self.array.compute_cat(x)?;
        let mut cat = match &mut self.predictive {
            Some(p) => {
                let c_pred = p.observe(x)?;
                p.combine(c_env, c_pred)?
            }
            None => c_env,
        };
        if let (Some(mem), Some(mcfg)) = (&self.memory, &self.cfg.memory) {
            if mcfg.cat_bias {
                cat = mem.apply_memory_bias(cat, self.cfg.scenario.name.as_str());
            }
        }
        Ok(cat.clamp(0.0, 1.0))
    }

    fn observe(&self, x: &[f64], cat: f64, y_hat: f64, d_mean: f64) -> Result<Vec<f64>> {
        let inputs = ObsInputs { x, activations: self.array.activations(), cat, y_hat, d_mean, age: self.cfg.age };
        Ok(build_observation(&inputs, FEATURES, self.array.m(), self.cfg.obs_mode)?.values)
    }
}

impl Environment for AfferentTask {
    fn obs_dim(&self) -> usize {
        self.cfg.obs_mode.dim(FEATURES, self.array.m())
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.episode = 0;
        self.state = None;
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let seed = derive_seed(self.seed, self.episode);
        self.episode += 1;
        let state = env::reset(&self.cfg.scenario, self.cfg.age, seed)?;
        self.array.reset_state();
        if let Some(p) = &mut self.predictive {
            p.clear();
        }
        if let Some(m) = &mut self.memory {
            m.end_episode();
        }
        let x = state.x;
        self.state = Some(state);
        let cat = self.sense(&x)?;
        self.observe(&x, cat, 0.0, 0.0)
    }

    fn step(&mut self, action: f64) -> Result<EnvStep> {
        let state = self.state.take().ok_or_else(|| Error::Validation("step called before reset".into()))?;
        let action = action.clamp(0.0, 1.0);
        if let Some(p) = &mut self.predictive {
            p.anticipate(&state.x, action, &env::context(state.t + 1))?;
        }
        let (next, res) = env::step(&state, action, &self.cfg.scenario, self.cfg.episode_len);
        let x = res.x_next;
        let cat = self.sense(&x)?;

        let mut recall = Default::default();
        if let Some(mem) = &mut self.memory {
            let record = StepRecord {
                x: x.to_vec(),
                activations: self.array.activations().to_vec(),
                cat,
                action,
                delta_d: res.delta_d,
            };
            mem.maybe_capture(record, self.cfg.scenario.name.as_str(), next.t);
            recall = mem.recall();
            if res.done {
                mem.end_episode();
            }
        }
        let crate::memory::RecallResult { y_hat, d_mean } = recall;
        let reward = shaped_reward(res.task_reward, cat, res.delta_d, y_hat, &self.cfg.reward);
        let obs = self.observe(&x, cat, y_hat, d_mean)?;
        self.state = Some(next);
        Ok(EnvStep {
            obs,
            reward,
            done: res.done,
            info: StepInfo { cat, delta_d: res.delta_d, task_reward: res.task_reward, y_hat, d_mean },
        })
    }
}
