//! Synthetic knee twin.
//!
//! Features are normalized `[stress, strain, shear]` loads produced by a
//! work-intensity action over an 80-step gait cycle. Loads grow with age and
//! with the scenario multipliers; damage accumulates whenever the weighted
//! load exceeds an age-dependent safe envelope. Damage never leaves this
//! module except as the per-step increment.

use std::f64::consts::{FRAC_PI_3, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const FEATURES: usize = 3;
pub const GAIT_CYCLE: usize = 80;
pub const MIN_AGE: f64 = 20.0;
pub const MAX_AGE: f64 = 90.0;

pub type Features = [f64; FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Normal,
    AclDeficient,
    MeniscusOverload,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Normal, Scenario::AclDeficient, Scenario::MeniscusOverload];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Normal => "normal",
            Scenario::AclDeficient => "acl_deficient",
            Scenario::MeniscusOverload => "meniscus_overload",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: Scenario,
    pub stress_mult: f64,
    pub strain_mult: f64,
    pub shear_mult: f64,
    pub instability: f64,
    pub noise_sd: f64,
}

impl ScenarioConfig {
    pub fn preset(name: Scenario) -> Self {
        let (stress_mult, strain_mult, shear_mult, instability) = match name {
            Scenario::Normal => (1.0, 1.0, 1.0, 0.05),
            Scenario::AclDeficient => (1.15, 1.05, 1.5, 0.4),
            Scenario::MeniscusOverload => (1.4, 1.2, 1.1, 0.15),
        };
        Self { name, stress_mult, strain_mult, shear_mult, instability, noise_sd: 0.02 }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, m) in
            [("stress_mult", self.stress_mult), ("strain_mult", self.strain_mult), ("shear_mult", self.shear_mult)]
        {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("{label} = {m} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.instability) {
            return Err(Error::Config(format!("instability = {} outside [0,1]", self.instability)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd = {} must be >= 0", self.noise_sd)));
        }
        Ok(())
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::preset(Scenario::Normal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub t: usize,
    pub x: Features,
    /// Cumulative damage. Never part of a policy observation.
    pub damage: f64,
    pub age: f64,
    pub years_worked: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub x_next: Features,
    pub delta_d: f64,
    pub task_reward: f64,
    pub done: bool,
}

pub fn age_multiplier(age: f64) -> f64 {
    1.0 + 0.01 * (age - MIN_AGE)
}

/// Load level below which no damage accrues.
pub fn safe_load(age: f64) -> f64 {
    (0.6 - 0.004 * (age - MIN_AGE)).max(0.2)
}

/// Intensity above which the task reward starts to saturate.
pub fn optimal_intensity(age: f64) -> f64 {
    0.8 - 0.003 * (age - MIN_AGE)
}

pub fn gait_phase(t: usize) -> f64 {
    TAU * (t % GAIT_CYCLE) as f64 / GAIT_CYCLE as f64
}

pub fn reset(cfg: &ScenarioConfig, age: f64, seed: u64) -> Result<EnvState> {
    if !(MIN_AGE..=MAX_AGE).contains(&age) {
        return Err(Error::Validation(format!("age {age} outside [{MIN_AGE}, {MAX_AGE}]")));
    }
    cfg.validate()?;
    let mut state =
        EnvState { t: 0, x: [0.0; FEATURES], damage: 0.0, age, years_worked: age - MIN_AGE, rng_seed: seed };
    state.x = gen_features(&state, 0.0, cfg);
    Ok(state)
}

/// Loads produced at `state.t` by work intensity `action`.
pub fn gen_features(state: &EnvState, action: f64, cfg: &ScenarioConfig) -> Features {
    let phi = gait_phase(state.t);
    let scale = age_multiplier(state.age) * action;
    let eta = |stream: u64| {
        if cfg.noise_sd == 0.0 {
            0.0
        } else {
            cfg.noise_sd * rng::normal(state.rng_seed, state.t as u64, stream)
        }
    };
    let stress = cfg.stress_mult * scale * (0.45 + 0.25 * phi.sin()) + eta(0);
    let strain = cfg.strain_mult * scale * (0.40 + 0.20 * (phi + FRAC_PI_3).sin()) + eta(1);
    let shear = cfg.shear_mult * scale * (0.30 + 0.20 * phi.sin().abs() + 0.3 * cfg.instability) + eta(2);
    [stress.clamp(0.0, 1.0), strain.clamp(0.0, 1.0), shear.clamp(0.0, 1.0)]
}

pub fn load(x: &Features) -> f64 {
    0.5 * x[0] + 0.3 * x[2] + 0.2 * x[1]
}

/// Damage accrued by loads `x`; the action enters only through `x`.
pub fn damage_increment(x: &Features, _action: f64, age: f64) -> f64 {
    let excess = (load(x) - safe_load(age)).max(0.0);
    0.01 * excess * excess
}

pub fn task_reward(action: f64, age: f64) -> f64 {
    let over = (action - optimal_intensity(age)).max(0.0);
    action - 0.5 * over * over
}

/// Advance one step: the new loads are generated by `action` at `t + 1`
/// and the damage they cause is accumulated.
pub fn step(state: &EnvState, action: f64, cfg: &ScenarioConfig, episode_len: usize) -> (EnvState, StepResult) {
    let action = action.clamp(0.0, 1.0);
    let mut next = state.clone();
    next.t += 1;
    next.x = gen_features(&next, action, cfg);
    let delta_d = damage_increment(&next.x, action, state.age);
    next.damage += delta_d;
    let result = StepResult {
        x_next: next.x,
        delta_d,
        task_reward: task_reward(action, state.age),
        done: next.t >= episode_len,
    };
    (next, result)
}

/// Context vector for the safe-state model: gait phase of the upcoming step.
pub fn context(t_next: usize) -> [f64; 2] {
    let phi = gait_phase(t_next);
    [phi.sin(), phi.cos()]
}

/// One line of a rollout log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// Elapsed time in gait cycles.
    pub time: f64,
    pub stress: f64,
    pub strain: f64,
    pub shear: f64,
    pub scenario: Scenario,
    pub load_factor: f64,
    pub instability_index: f64,
    pub cat: f64,
    /// Afferent activations behind `cat`.
    pub cat_embedding: Vec<f64>,
    pub damage_increment: f64,
}

impl RolloutRecord {
    pub fn new(
        t: usize,
        x: &Features,
        cfg: &ScenarioConfig,
        load_factor: f64,
        cat: f64,
        embedding: &[f64],
        delta_d: f64,
    ) -> Self {
        Self {
            time: t as f64 / GAIT_CYCLE as f64,
            stress: x[0],
            strain: x[1],
            shear: x[2],
            scenario: cfg.name,
            load_factor,
            instability_index: cfg.instability,
            cat,
            cat_embedding: embedding.to_vec(),
            damage_increment: delta_d,
        }
    }
}
