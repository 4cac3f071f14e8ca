//! Scoring genomes by the policies that learn on top of them.

use serde::{Deserialize, Serialize};

use super::cmaes::EvolutionState;
use crate::afferent::{decode_genome, Genome};
use crate::error::{Error, Result};
use crate::policy::{evaluate, rl_train, EpisodeTrace, PpoConfig};
use crate::predictive::PredictiveChannel;
use crate::rng::derive_seed;
use crate::task::{AfferentTask, TaskConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitnessSpec {
    pub gamma_d: f64,
    pub eval_episodes: usize,
    pub eval_seeds: Vec<u64>,
    pub rl_steps_short: usize,
    pub rl_steps_long: usize,
    pub top_fraction: f64,
    /// Base seed for RL training inside fitness evaluations.
    pub rl_seed: u64,
    pub rl_seeds_short: usize,
    pub rl_seeds_long: usize,
}

impl Default for FitnessSpec {
    fn default() -> Self {
        Self {
            gamma_d: 1.0,
            eval_episodes: 2,
            eval_seeds: vec![9001, 9002],
            rl_steps_short: 2_000,
            rl_steps_long: 5_000,
            top_fraction: 0.25,
            rl_seed: 0,
            rl_seeds_short: 1,
            rl_seeds_long: 2,
        }
    }
}

impl FitnessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_d > 0.0 && self.gamma_d.is_finite()) {
            return Err(Error::Config(format!("gamma_d = {} must be > 0", self.gamma_d)));
        }
        if self.eval_episodes == 0 || self.eval_seeds.is_empty() {
            return Err(Error::Config("fitness needs at least one evaluation episode and seed".into()));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::Config(format!("top_fraction = {} outside (0, 1]", self.top_fraction)));
        }
        if self.rl_seeds_short == 0 || self.rl_seeds_long == 0 {
            return Err(Error::Config("rl seed counts must be positive".into()));
        }
        Ok(())
    }
}

/// Everything fixed across candidates: the task, its predictive channel and
/// the inner learner.
#[derive(Debug, Clone)]
pub struct FitnessContext {
    pub task: TaskConfig,
    pub predictive: Option<PredictiveChannel>,
    pub ppo: PpoConfig,
    pub dt: f64,
}

/// `mean(P) − γ_D · mean(D_total)` with `P` the per-step task reward of
/// each episode.
pub fn score(traces: &[EpisodeTrace], gamma_d: f64) -> f64 {
    if traces.is_empty() {
        return f64::NEG_INFINITY;
    }
    let n = traces.len() as f64;
    let p = traces.iter().map(EpisodeTrace::mean_task_reward).sum::<f64>() / n;
    let d = traces.iter().map(EpisodeTrace::damage_total).sum::<f64>() / n;
    p - gamma_d * d
}

/// Train for `rl_steps` with `rl_seed` and score the result. Training or
/// evaluation failures yield `-inf`.
pub fn evaluate_fitness(
    genome: &Genome,
    spec: &FitnessSpec,
    ctx: &FitnessContext,
    rl_steps: usize,
    rl_seed: u64,
) -> f64 {
    try_evaluate_fitness(genome, spec, ctx, rl_steps, rl_seed).unwrap_or(f64::NEG_INFINITY)
}

pub fn try_evaluate_fitness(
    genome: &Genome,
    spec: &FitnessSpec,
    ctx: &FitnessContext,
    rl_steps: usize,
    rl_seed: u64,
) -> Result<f64> {
    let array = decode_genome(genome, ctx.dt)?;
    let mut task = AfferentTask::new(ctx.task.clone(), array, ctx.predictive.clone())?;
    let ppo = PpoConfig { total_steps: rl_steps, ..ctx.ppo.clone() };
    let trained = rl_train(&mut task, &ppo, rl_seed)?;
    let traces = evaluate(&mut task, &trained.policy, &spec.eval_seeds, spec.eval_episodes, false)?;
    Ok(score(&traces, spec.gamma_d))
}

fn mean_fitness(genome: &Genome, spec: &FitnessSpec, ctx: &FitnessContext, steps: usize, seeds: usize) -> f64 {
    (0..seeds).map(|i| evaluate_fitness(genome, spec, ctx, steps, derive_seed(spec.rl_seed, i as u64))).sum::<f64>()
        / seeds as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best, mean and standard deviation of stage-one fitness.
    pub best: f64,
    pub mean: f64,
    pub std: f64,
    /// Best fitness after re-evaluation with longer training.
    pub best_long: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub generations: usize,
    pub popsize: usize,
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self { generations: 5, popsize: 8, sigma0: 0.5, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub best: Genome,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
    /// Highest-scoring genome of each generation.
    pub generation_best: Vec<Genome>,
}

/// Outer loop: sample, score at short training, re-score the top fraction
/// at long training, rank the re-scored candidates first, update.
pub fn run_evolution(
    spec: &FitnessSpec,
    ctx: &FitnessContext,
    evo: &EvolutionConfig,
    m: usize,
    k: usize,
) -> Result<EvolutionResult> {
    spec.validate()?;
    let n = Genome::len_for(m, k);
    let mut state = EvolutionState::new(vec![0.0; n], evo.sigma0, evo.popsize, evo.seed)?;
    let mut result = EvolutionResult {
        best: Genome::zeros(m, k),
        best_fitness: f64::NEG_INFINITY,
        history: Vec::with_capacity(evo.generations),
        generation_best: Vec::with_capacity(evo.generations),
    };
    let top = ((spec.top_fraction * evo.popsize as f64).ceil() as usize).clamp(1, evo.popsize);

    for generation in 0..evo.generations {
        let candidates = state.ask();
        let genomes = candidates.iter().map(|c| Genome::new(c.clone(), m, k)).collect::<Result<Vec<_>>>()?;
        let short: Vec<f64> =
            genomes.iter().map(|g| mean_fitness(g, spec, ctx, spec.rl_steps_short, spec.rl_seeds_short)).collect();

        let mut order: Vec<usize> = (0..short.len()).collect();
        order.sort_by(|&a, &b| rank_key(short[b]).total_cmp(&rank_key(short[a])));
        let mut long: Vec<(usize, f64)> = order[..top]
            .iter()
            .map(|&i| (i, mean_fitness(&genomes[i], spec, ctx, spec.rl_steps_long, spec.rl_seeds_long)))
            .collect();
        long.sort_by(|a, b| rank_key(b.1).total_cmp(&rank_key(a.1)));

        // Rank scores: re-evaluated candidates first, then the rest.
        let mut rank_score = vec![0.0; short.len()];
        let ranked = long.iter().map(|&(i, _)| i).chain(order[top..].iter().copied());
        for (pos, i) in ranked.enumerate() {
            rank_score[i] = -(pos as f64);
        }
        state.tell(&candidates, &rank_score)?;

        let (best_idx, best_long) = long[0];
        if best_long > result.best_fitness || result.history.is_empty() {
            result.best_fitness = best_long;
            result.best = genomes[best_idx].clone();
        }
        result.generation_best.push(genomes[best_idx].clone());
        result.history.push(summarize(generation, &short, best_long));
    }
    if evo.generations == 0 {
        result.best = Genome::new(state.mean.iter().copied().collect(), m, k)?;
    }
    Ok(result)
}

fn rank_key(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::NEG_INFINITY
    }
}

fn summarize(generation: usize, fitness: &[f64], best_long: f64) -> GenerationStats {
    let finite: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
    let n = finite.len().max(1) as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let std = (finite.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n).sqrt();
    let best = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    GenerationStats { generation, best, mean, std, best_long }
}
