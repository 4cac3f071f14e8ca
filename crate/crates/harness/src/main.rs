use std::path::PathBuf;
use std::process::ExitCode;

use afferent_core::env::Scenario;
use afferent_harness::io::OutputDir;
use afferent_harness::runner;
use afferent_harness::{Ablation, ExperimentConfig, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afferent", version, about = "Evolved afferent sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the twin at a constant load and write JSONL traces.
    Simulate(Overrides),
    /// Train policies for one variant across ages and seeds.
    Train(Overrides),
    /// Run the two-stage CMA-ES search over afferent genomes.
    Evolve(Overrides),
    /// Train and evaluate one variant, then report metrics.
    Evaluate(Overrides),
    /// Train and evaluate every variant and compare against the full system.
    Ablate(Overrides),
    /// Estimate local Lipschitz ratios of the fitness around the genome.
    ProbeLipschitz(Overrides),
    /// Print the effective configuration as TOML.
    Config(Overrides),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<String>,
    /// Comma-separated ages.
    #[arg(long, value_delimiter = ',')]
    ages: Option<Vec<f64>>,
    #[arg(long)]
    scenario: Option<String>,
    /// PPO step budget (simulation length for `simulate`).
    #[arg(long)]
    steps: Option<usize>,
}

impl Overrides {
    fn resolve(&self, simulate: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(a) = &self.ablation {
            cfg.ablation = a.parse()?;
        }
        if let Some(ages) = &self.ages {
            cfg.ages = ages.clone();
        }
        if let Some(s) = &self.scenario {
            let scenario: Scenario = s.parse()?;
            cfg.env.scenario = scenario;
            cfg.simulate.scenarios = vec![scenario];
        }
        if let Some(steps) = self.steps {
            if simulate {
                cfg.simulate.steps = steps;
            } else {
                cfg.ppo.total_steps = steps;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (o, simulate) = match &cli.command {
        Command::Simulate(o) => (o, true),
        Command::Train(o)
        | Command::Evolve(o)
        | Command::Evaluate(o)
        | Command::Ablate(o)
        | Command::ProbeLipschitz(o)
        | Command::Config(o) => (o, false),
    };
    let cfg = o.resolve(simulate)?;
    if let Command::Config(_) = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let out = OutputDir::create(&cfg.out)?;
    let summary = match cli.command {
        Command::Simulate(_) => {
            let r = runner::simulate(&cfg, &out)?;
            format!("wrote {} rollout files", r.files.len())
        }
        Command::Train(_) => {
            let r = runner::train(&cfg, &out)?;
            format!("trained {} policies ({} failed)", r.runs.len(), r.failures.len())
        }
        Command::Evolve(_) => {
            let r = runner::evolve(&cfg, &out)?;
            format!("best fitness {}", r.best_fitness)
        }
        Command::Evaluate(_) => {
            let r = runner::evaluate_variant(&cfg, &out)?;
            format!("{}: cat_efficiency {}", r.variant, r.cat_efficiency)
        }
        Command::Ablate(_) => {
            let r = runner::run_ablation(&cfg, &Ablation::ALL, Some(&out))?;
            format!("{} variants, {} failed runs", r.variants.len(), r.failures.len())
        }
        Command::ProbeLipschitz(_) => {
            let r = runner::probe_lipschitz(&cfg, &out)?;
            format!("{} accepted pairs", r.accepted)
        }
        Command::Config(_) => unreachable!(),
    };
    eprintln!("{summary}; outputs in {}", out.root().display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
