//! Experiment configuration, read from TOML. Every field has a default, so
//! a file only needs the values it changes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use afferent_core::env::{Scenario, ScenarioConfig};
use afferent_core::evolve::{EvolutionConfig, FitnessSpec, ProbeConfig};
use afferent_core::memory::MemoryConfig;
use afferent_core::policy::{ObsMode, PpoConfig, RewardParams};
use afferent_core::task::PredictiveConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoCat,
    NoEvolution,
    NoAmm,
    NoPredictive,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Full, Ablation::NoCat, Ablation::NoEvolution, Ablation::NoAmm, Ablation::NoPredictive];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoCat => "no_cat",
            Ablation::NoEvolution => "no_evolution",
            Ablation::NoAmm => "no_amm",
            Ablation::NoPredictive => "no_predictive",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown ablation '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfferentSection {
    pub m: usize,
    pub dt: f64,
    /// Genome file for the full system; the hand-designed array is used
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub genome: Option<PathBuf>,
}

impl Default for AfferentSection {
    fn default() -> Self {
        Self { m: 8, dt: 1.0, genome: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub scenario: Scenario,
    pub episode_len: usize,
    pub obs_mode: ObsMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stress_mult: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strain_mult: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shear_mult: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::Normal,
            episode_len: 200,
            obs_mode: ObsMode::Epi,
            stress_mult: None,
            strain_mult: None,
            shear_mult: None,
            instability: None,
            noise_sd: None,
        }
    }
}

impl EnvSection {
    pub fn scenario_config(&self, scenario: Scenario) -> ScenarioConfig {
        let mut c = ScenarioConfig::preset(scenario);
        c.stress_mult = self.stress_mult.unwrap_or(c.stress_mult);
        c.strain_mult = self.strain_mult.unwrap_or(c.strain_mult);
        c.shear_mult = self.shear_mult.unwrap_or(c.shear_mult);
        c.instability = self.instability.unwrap_or(c.instability);
        c.noise_sd = self.noise_sd.unwrap_or(c.noise_sd);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemorySection {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: MemoryConfig,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self { enabled: true, config: MemoryConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionSection {
    pub generations: usize,
    pub popsize: usize,
    pub sigma0: f64,
    /// Age of the task candidates are scored on.
    pub age: f64,
    #[serde(flatten)]
    pub fitness: FitnessSpec,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self { generations: 5, popsize: 8, sigma0: 0.5, age: 60.0, fitness: FitnessSpec::default() }
    }
}

impl EvolutionSection {
    pub fn evolution_config(&self, seed: u64) -> EvolutionConfig {
        EvolutionConfig { generations: self.generations, popsize: self.popsize, sigma0: self.sigma0, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub eval_seeds: Vec<u64>,
    pub eval_episodes: usize,
    /// Write the observation vector of every evaluated step.
    pub log_observations: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { eval_seeds: vec![1000, 1001], eval_episodes: 2, log_observations: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenarios: Vec<Scenario>,
    pub repeats: usize,
    pub steps: usize,
    pub load_factor: f64,
    pub age: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { scenarios: Scenario::ALL.to_vec(), repeats: 5, steps: 80, load_factor: 1.0, age: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub n_pairs: usize,
    pub radius: f64,
    pub pert_sd: f64,
    pub quantile: f64,
    pub rl_steps: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self { n_pairs: p.n_pairs, radius: p.radius, pert_sd: p.pert_sd, quantile: p.quantile, rl_steps: 2_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed for simulate, evolve and probe-lipschitz.
    pub seed: u64,
    /// Training seeds for train, evaluate and ablate.
    pub seeds: Vec<u64>,
    pub ages: Vec<f64>,
    pub ablation: Ablation,
    pub out: PathBuf,
    pub afferent: AfferentSection,
    pub env: EnvSection,
    pub reward: RewardParams,
    pub memory: MemorySection,
    pub predictive: PredictiveConfig,
    pub ppo: PpoConfig,
    pub evolution: EvolutionSection,
    pub eval: EvalSection,
    pub simulate: SimulateSection,
    pub probe: ProbeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            ages: vec![20.0, 40.0, 60.0, 80.0],
            ablation: Ablation::Full,
            out: PathBuf::from("out"),
            afferent: AfferentSection::default(),
            env: EnvSection::default(),
            reward: RewardParams::default(),
            memory: MemorySection::default(),
            predictive: PredictiveConfig::default(),
            ppo: PpoConfig::default(),
            evolution: EvolutionSection::default(),
            eval: EvalSection::default(),
            simulate: SimulateSection::default(),
            probe: ProbeSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(HarnessError::Config(m));
        if self.ages.is_empty() || self.seeds.is_empty() {
            return cfg_err("ages and seeds must be non-empty".into());
        }
        if let Some(a) = self.ages.iter().find(|a| !(20.0..=90.0).contains(*a)) {
            return cfg_err(format!("age {a} outside [20, 90]"));
        }
        if self.afferent.m == 0 || !(self.afferent.dt > 0.0) {
            return cfg_err("afferent.m must be positive and afferent.dt > 0".into());
        }
        if self.eval.eval_seeds.is_empty() || self.eval.eval_episodes == 0 {
            return cfg_err("eval needs at least one seed and episode".into());
        }
        if !(0.0..=1.0).contains(&self.simulate.load_factor) {
            return cfg_err(format!("simulate.load_factor = {} outside [0, 1]", self.simulate.load_factor));
        }
        self.env.scenario_config(self.env.scenario).validate()?;
        self.reward.validate()?;
        self.memory.config.validate()?;
        self.ppo.validate()?;
        self.evolution.fitness.validate()?;
        Ok(())
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            n_pairs: self.probe.n_pairs,
            radius: self.probe.radius,
            pert_sd: self.probe.pert_sd,
            quantile: self.probe.quantile,
            seed: self.seed,
        }
    }
}
