//! Building variants and running the experiment subcommands.

use std::collections::BTreeMap;

use afferent_core::afferent::{decode_genome, hand_designed_genome, Genome, GenomeFile, GenomeMeta};
use afferent_core::env::{RolloutRecord, FEATURES};
use afferent_core::evolve::{
    evaluate_fitness, lipschitz_probe, run_evolution, FitnessContext, GenerationStats, ProbeReport,
};
use afferent_core::policy::{
    evaluate, rl_train, Environment, EpisodeTrace, IterationStats, ObsMode, PolicyCheckpoint, RewardParams,
};
use afferent_core::predictive::PredictiveChannel;
use afferent_core::rng::derive_seed;
use afferent_core::task::{fit_predictive, AfferentTask, TaskConfig};
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::io::{self, write_csv, write_json, write_jsonl, OutputDir};
use crate::metrics::{age_key, compute_metrics, welch_test, MetricsReport, RunLog, WelchResult};

/// Pieces shared by every run of one configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub predictive: Option<PredictiveChannel>,
    pub genome: Genome,
    pub genome_source: String,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let predictive = fit_predictive(&cfg.predictive, cfg.env.episode_len)?;
    let (m, dt) = (cfg.afferent.m, cfg.afferent.dt);
    let (genome, genome_source) = match &cfg.afferent.genome {
        Some(path) => {
            let g = GenomeFile::load(path)?.genome()?;
            if g.m != m || g.k != FEATURES {
                return Err(HarnessError::Config(format!(
                    "genome file has m={}, k={}; config expects m={m}, k={FEATURES}",
                    g.m, g.k
                )));
            }
            (g, "file".to_string())
        }
        None => (hand_designed_genome(m, FEATURES, dt)?, "hand_designed".to_string()),
    };
    Ok(Prepared { predictive, genome, genome_source })
}

impl Prepared {
    pub fn genome_source(&self, variant: Ablation) -> &str {
        if variant == Ablation::NoEvolution {
            "hand_designed"
        } else {
            &self.genome_source
        }
    }
}

pub fn memory_enabled(cfg: &ExperimentConfig, variant: Ablation) -> bool {
    cfg.memory.enabled && !matches!(variant, Ablation::NoAmm | Ablation::NoCat)
}

pub fn task_config(cfg: &ExperimentConfig, variant: Ablation, age: f64) -> TaskConfig {
    let mut reward = cfg.reward;
    let obs_mode = match variant {
        Ablation::NoCat => {
            reward = RewardParams { lambda_cat: 0.0, lambda_mem: 0.0, ..reward };
            ObsMode::Features
        }
        Ablation::NoAmm => {
            reward.lambda_mem = 0.0;
            if cfg.env.obs_mode == ObsMode::Epi {
                ObsMode::Base
            } else {
                cfg.env.obs_mode
            }
        }
        _ => cfg.env.obs_mode,
    };
    TaskConfig {
        scenario: cfg.env.scenario_config(cfg.env.scenario),
        age,
        episode_len: cfg.env.episode_len,
        obs_mode,
        reward,
        memory: memory_enabled(cfg, variant).then(|| cfg.memory.config.clone()),
    }
}

pub fn build_task(cfg: &ExperimentConfig, prep: &Prepared, variant: Ablation, age: f64) -> Result<AfferentTask> {
    let genome = match variant {
        Ablation::NoEvolution => hand_designed_genome(cfg.afferent.m, FEATURES, cfg.afferent.dt)?,
        _ => prep.genome.clone(),
    };
    let array = decode_genome(&genome, cfg.afferent.dt)?;
    let predictive = match variant {
        Ablation::NoPredictive => None,
        _ => prep.predictive.clone(),
    };
    Ok(AfferentTask::new(task_config(cfg, variant, age), array, predictive)?)
}

/// One evaluated step as written to `runs/*.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub eval_seed: u64,
    pub episode: usize,
    pub t: usize,
    pub action: f64,
    pub reward: f64,
    pub task_reward: f64,
    pub damage_increment: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_mean: Option<f64>,
    pub obs_layout: ObsMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obs: Vec<f64>,
}

fn step_logs<'a>(traces: &'a [EpisodeTrace], layout: ObsMode, memory: bool) -> impl Iterator<Item = StepLog> + 'a {
    traces.iter().flat_map(move |tr| {
        tr.info.iter().enumerate().map(move |(t, info)| StepLog {
            eval_seed: tr.seed,
            episode: tr.episode,
            t,
            action: tr.actions[t],
            reward: tr.rewards[t],
            task_reward: info.task_reward,
            damage_increment: info.delta_d,
            cat: layout.includes_cat().then_some(info.cat),
            y_hat: memory.then_some(info.y_hat),
            d_mean: memory.then_some(info.d_mean),
            obs_layout: layout,
            obs: tr.observations.get(t).cloned().unwrap_or_default(),
        })
    })
}

fn run_id(variant: Ablation, age: f64, seed: u64) -> String {
    format!("{variant}_age{}_seed{seed}", age_key(age))
}

fn write_curve(path: &std::path::Path, history: &[IterationStats]) -> Result<()> {
    let rows = history.iter().map(|h| {
        vec![
            h.steps.to_string(),
            h.mean_reward.to_string(),
            h.mean_cat.to_string(),
            h.mean_delta_d.to_string(),
            h.loss.clip_fraction.to_string(),
        ]
    });
    write_csv(path, &["step", "mean_reward", "mean_cat", "mean_delta_d", "clip_fraction"], rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub variant: Ablation,
    pub age: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub age: f64,
    pub seed: u64,
    pub iterations: usize,
    pub last: Option<IterationStats>,
}

/// Results of training (and optionally evaluating) one variant.
#[derive(Debug, Clone)]
pub struct VariantRuns {
    pub variant: Ablation,
    pub logs: Vec<RunLog>,
    pub train: Vec<TrainRun>,
    pub failures: Vec<Failure>,
}

/// Train `variant` for every (age, seed); evaluate when `eval` is set.
pub fn run_variant(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    variant: Ablation,
    eval: bool,
    out: Option<&OutputDir>,
) -> Result<VariantRuns> {
    let mut runs = VariantRuns { variant, logs: Vec::new(), train: Vec::new(), failures: Vec::new() };
    for &age in &cfg.ages {
        for &seed in &cfg.seeds {
            match run_one(cfg, prep, variant, age, seed, eval, out) {
                Ok((train, log)) => {
                    runs.train.push(train);
                    runs.logs.extend(log);
                }
                Err(HarnessError::Core(e)) => {
                    runs.failures.push(Failure { variant, age, seed, error: e.to_string() });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(runs)
}

fn run_one(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    variant: Ablation,
    age: f64,
    seed: u64,
    eval: bool,
    out: Option<&OutputDir>,
) -> Result<(TrainRun, Option<RunLog>)> {
    let mut task = build_task(cfg, prep, variant, age)?;
    let outcome = rl_train(&mut task, &cfg.ppo, seed)?;
    let id = run_id(variant, age, seed);
    let layout = task.config().obs_mode;
    if let Some(out) = out {
        write_curve(&out.curves(&format!("train_{id}.csv")), &outcome.history)?;
        let ckpt = PolicyCheckpoint { policy: outcome.policy.clone(), obs_layout: layout, config: cfg.ppo.clone() };
        write_json(&out.reports(&format!("policy_{id}.json")), &ckpt)?;
    }
    let train = TrainRun { age, seed, iterations: outcome.history.len(), last: outcome.history.last().copied() };
    if !eval {
        return Ok((train, None));
    }
    let traces =
        evaluate(&mut task, &outcome.policy, &cfg.eval.eval_seeds, cfg.eval.eval_episodes, cfg.eval.log_observations)?;
    if let Some(out) = out {
        write_jsonl(&out.runs(&format!("{id}.jsonl")), step_logs(&traces, layout, memory_enabled(cfg, variant)))?;
    }
    Ok((train, Some(RunLog { age, seed, traces })))
}

pub fn variant_metrics(cfg: &ExperimentConfig, prep: &Prepared, runs: &VariantRuns) -> Result<MetricsReport> {
    compute_metrics(
        &runs.logs,
        runs.variant.as_str(),
        prep.genome_source(runs.variant),
        memory_enabled(cfg, runs.variant),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Ablation,
    pub genome_source: String,
    pub total_steps: usize,
    pub runs: Vec<TrainRun>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<Failure>,
}

pub fn train(cfg: &ExperimentConfig, out: &OutputDir) -> Result<TrainReport> {
    let prep = prepare(cfg)?;
    let runs = run_variant(cfg, &prep, cfg.ablation, false, Some(out))?;
    let report = TrainReport {
        variant: cfg.ablation,
        genome_source: prep.genome_source(cfg.ablation).to_string(),
        total_steps: cfg.ppo.total_steps,
        runs: runs.train,
        failures: runs.failures,
    };
    write_json(&out.reports(&format!("train_{}.json", cfg.ablation)), &report)?;
    Ok(report)
}

pub fn evaluate_variant(cfg: &ExperimentConfig, out: &OutputDir) -> Result<MetricsReport> {
    let prep = prepare(cfg)?;
    let runs = run_variant(cfg, &prep, cfg.ablation, true, Some(out))?;
    write_failures(out, &runs.failures)?;
    let report = variant_metrics(cfg, &prep, &runs)?;
    write_json(&out.reports(&format!("evaluate_{}.json", cfg.ablation)), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: BTreeMap<String, MetricsReport>,
    /// Welch tests of each variant against the full system.
    pub comparisons: BTreeMap<String, WelchResult>,
    /// Number of comparisons, for a Bonferroni correction by the reader.
    pub bonferroni_multiplier: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<Failure>,
}

pub fn run_ablation(cfg: &ExperimentConfig, variants: &[Ablation], out: Option<&OutputDir>) -> Result<AblationReport> {
    let prep = prepare(cfg)?;
    let mut report = AblationReport {
        variants: BTreeMap::new(),
        comparisons: BTreeMap::new(),
        bonferroni_multiplier: 0,
        failures: Vec::new(),
    };
    let mut per_run: BTreeMap<Ablation, Vec<(f64, f64)>> = BTreeMap::new();
    for &variant in variants {
        let runs = run_variant(cfg, &prep, variant, true, out)?;
        report.failures.extend(runs.failures.iter().cloned());
        if runs.logs.is_empty() {
            continue;
        }
        let metrics = variant_metrics(cfg, &prep, &runs)?;
        per_run.insert(variant, metrics.runs.iter().map(|r| (r.d_total, r.mean_cat)).collect());
        report.variants.insert(variant.to_string(), metrics);
    }
    if let Some(full) = per_run.get(&Ablation::Full) {
        for (variant, rows) in &per_run {
            if *variant == Ablation::Full {
                continue;
            }
            for (name, col) in [("d_total", 0), ("mean_cat", 1)] {
                let pick = |r: &(f64, f64)| if col == 0 { r.0 } else { r.1 };
                let a: Vec<f64> = rows.iter().map(pick).collect();
                let b: Vec<f64> = full.iter().map(pick).collect();
                if let Ok(w) = welch_test(&a, &b) {
                    report.comparisons.insert(format!("{name}:{variant}_vs_full"), w);
                }
            }
        }
    }
    report.bonferroni_multiplier = report.comparisons.len();
    if let Some(out) = out {
        write_failures(out, &report.failures)?;
        write_json(&out.reports("ablation.json"), &report)?;
    }
    Ok(report)
}

fn write_failures(out: &OutputDir, failures: &[Failure]) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    write_json(&out.reports("failures.json"), &failures)
}

pub fn fitness_context(cfg: &ExperimentConfig, prep: &Prepared) -> FitnessContext {
    FitnessContext {
        task: task_config(cfg, Ablation::Full, cfg.evolution.age),
        predictive: prep.predictive.clone(),
        ppo: cfg.ppo.clone(),
        dt: cfg.afferent.dt,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub m: usize,
    pub k: usize,
    pub generations: usize,
    pub popsize: usize,
    #[serde(with = "io::float")]
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
}

pub fn evolve(cfg: &ExperimentConfig, out: &OutputDir) -> Result<EvolveReport> {
    let prep = prepare(cfg)?;
    let ctx = fitness_context(cfg, &prep);
    let evo = cfg.evolution.evolution_config(cfg.seed);
    let m = cfg.afferent.m;
    let result = run_evolution(&cfg.evolution.fitness, &ctx, &evo, m, FEATURES)?;
    for (stats, genome) in result.history.iter().zip(&result.generation_best) {
        let meta = GenomeMeta { generation: stats.generation as u32, fitness: stats.best_long };
        GenomeFile::new(genome, meta).save(&out.genomes(&format!("gen_{:03}.bin", stats.generation)))?;
    }
    let meta = GenomeMeta { generation: result.history.len() as u32, fitness: result.best_fitness };
    GenomeFile::new(&result.best, meta).save(&out.genomes("best.bin"))?;
    let rows = result.history.iter().map(|h| {
        vec![
            h.generation.to_string(),
            h.best.to_string(),
            h.mean.to_string(),
            h.std.to_string(),
            h.best_long.to_string(),
        ]
    });
    write_csv(&out.curves("evolution.csv"), &["generation", "best", "mean", "std", "best_long"], rows)?;
    let report = EvolveReport {
        m,
        k: FEATURES,
        generations: evo.generations,
        popsize: evo.popsize,
        best_fitness: result.best_fitness,
        history: result.history,
    };
    write_json(&out.reports("evolve.json"), &report)?;
    Ok(report)
}

pub fn probe_lipschitz(cfg: &ExperimentConfig, out: &OutputDir) -> Result<ProbeReport> {
    let prep = prepare(cfg)?;
    let ctx = fitness_context(cfg, &prep);
    let spec = &cfg.evolution.fitness;
    let steps = cfg.probe.rl_steps;
    let report =
        lipschitz_probe(&prep.genome, |g| evaluate_fitness(g, spec, &ctx, steps, spec.rl_seed), &cfg.probe_config())?;
    write_json(&out.reports("lipschitz.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub files: Vec<String>,
    pub lines_per_file: usize,
    pub mean_cat: BTreeMap<String, f64>,
}

/// Drive the twin at a constant load for each (scenario, repeat) and write
/// one JSONL rollout per pair.
pub fn simulate(cfg: &ExperimentConfig, out: &OutputDir) -> Result<SimulateReport> {
    let prep = prepare(cfg)?;
    let sim = &cfg.simulate;
    let mut report = SimulateReport { files: Vec::new(), lines_per_file: sim.steps, mean_cat: BTreeMap::new() };
    for (si, &scenario) in sim.scenarios.iter().enumerate() {
        let scenario_cfg = cfg.env.scenario_config(scenario);
        let task_cfg = TaskConfig {
            scenario: scenario_cfg.clone(),
            age: sim.age,
            episode_len: sim.steps.max(1),
            obs_mode: ObsMode::Base,
            reward: cfg.reward,
            memory: None,
        };
        let array = decode_genome(&prep.genome, cfg.afferent.dt)?;
        let mut task = AfferentTask::new(task_cfg, array, prep.predictive.clone())?;
        let mut cat_sum = 0.0;
        for rep in 0..sim.repeats {
            task.set_seed(derive_seed(cfg.seed, (si * 1000 + rep) as u64));
            task.reset()?;
            let mut rows = Vec::with_capacity(sim.steps);
            for _ in 0..sim.steps {
                let step = task.step(sim.load_factor)?;
                let state = task.state().expect("state exists after a step");
                cat_sum += step.info.cat;
                rows.push(RolloutRecord::new(
                    state.t,
                    &state.x,
                    &scenario_cfg,
                    sim.load_factor,
                    step.info.cat,
                    task.array().activations(),
                    step.info.delta_d,
                ));
            }
            let name = format!("simulate_{}_{rep:02}.jsonl", scenario.as_str());
            write_jsonl(&out.runs(&name), &rows)?;
            report.files.push(name);
        }
        let n = (sim.repeats * sim.steps).max(1) as f64;
        report.mean_cat.insert(scenario.as_str().to_string(), cat_sum / n);
    }
    write_json(&out.reports("simulate.json"), &report)?;
    Ok(report)
}
