//! Aggregate metrics over evaluation logs, and Welch's t-test.

use std::collections::BTreeMap;

use afferent_core::policy::EpisodeTrace;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{HarnessError, Result};

/// Actions below this intensity count as safe.
pub const SAFE_ACTION: f64 = 0.3;

/// Evaluation episodes of one trained policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub age: f64,
    pub seed: u64,
    pub traces: Vec<EpisodeTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    #[serde(with = "crate::io::float")]
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub age: f64,
    pub seed: u64,
    /// Mean terminal damage per evaluation episode.
    pub d_total: f64,
    pub mean_cat: f64,
    pub mean_action: f64,
    pub mean_task_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub genome_source: String,
    pub ages: Vec<f64>,
    pub mean_cat: BTreeMap<String, f64>,
    pub cat_efficiency: f64,
    /// `None` when only one age was evaluated.
    pub age_robustness: Option<f64>,
    pub mean_action: BTreeMap<String, f64>,
    pub safe_action_fraction: BTreeMap<String, f64>,
    pub runs: Vec<RunSummary>,
    pub mean_d_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_recall_risk: Option<BTreeMap<String, f64>>,
    pub welch: BTreeMap<String, WelchResult>,
}

pub fn age_key(age: f64) -> String {
    format!("{age}")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Aggregate logs into a report. `with_recall` adds the mean recall risk.
pub fn compute_metrics(
    logs: &[RunLog],
    variant: &str,
    genome_source: &str,
    with_recall: bool,
) -> Result<MetricsReport> {
    if logs.is_empty() || logs.iter().any(|l| l.traces.iter().all(|t| t.actions.is_empty())) {
        return Err(HarnessError::Core(afferent_core::Error::Validation("empty evaluation logs".into())));
    }
    let mut ages: Vec<f64> = logs.iter().map(|l| l.age).collect();
    ages.sort_by(f64::total_cmp);
    ages.dedup();

    let mut mean_cat = BTreeMap::new();
    let mut mean_action = BTreeMap::new();
    let mut safe = BTreeMap::new();
    let mut recall = BTreeMap::new();
    let (mut cat_sum, mut cat_n) = (0.0, 0usize);
    for &age in &ages {
        let traces: Vec<&EpisodeTrace> = logs.iter().filter(|l| l.age == age).flat_map(|l| &l.traces).collect();
        let cats: Vec<f64> = traces.iter().flat_map(|t| t.info.iter().map(|i| i.cat)).collect();
        let acts: Vec<f64> = traces.iter().flat_map(|t| t.actions.iter().copied()).collect();
        let recalls: Vec<f64> = traces.iter().flat_map(|t| t.info.iter().map(|i| i.y_hat)).collect();
        cat_sum += cats.iter().sum::<f64>();
        cat_n += cats.len();
        mean_cat.insert(age_key(age), mean(&cats));
        mean_action.insert(age_key(age), mean(&acts));
        safe.insert(age_key(age), acts.iter().filter(|&&a| a < SAFE_ACTION).count() as f64 / acts.len() as f64);
        recall.insert(age_key(age), mean(&recalls));
    }
    let pooled = cat_sum / cat_n as f64;
    let age_robustness =
        (ages.len() >= 2).then(|| (mean_cat[&age_key(ages[ages.len() - 1])] - mean_cat[&age_key(ages[0])]).abs());

    let runs: Vec<RunSummary> = logs.iter().map(summarize_run).collect();
    let mean_d_total = mean(&runs.iter().map(|r| r.d_total).collect::<Vec<_>>());

    let mut welch = BTreeMap::new();
    if ages.len() >= 2 {
        let (lo, hi) = (ages[0], ages[ages.len() - 1]);
        let pick =
            |age: f64, f: fn(&RunSummary) -> f64| runs.iter().filter(|r| r.age == age).map(f).collect::<Vec<_>>();
        for (name, f) in
            [("mean_cat", (|r: &RunSummary| r.mean_cat) as fn(&RunSummary) -> f64), ("mean_action", |r| r.mean_action)]
        {
            if let Ok(w) = welch_test(&pick(hi, f), &pick(lo, f)) {
                welch.insert(format!("{name}:age{}_vs_age{}", age_key(hi), age_key(lo)), w);
            }
        }
    }

    Ok(MetricsReport {
        variant: variant.to_string(),
        genome_source: genome_source.to_string(),
        ages,
        mean_cat,
        cat_efficiency: 1.0 / pooled,
        age_robustness,
        mean_action,
        safe_action_fraction: safe,
        runs,
        mean_d_total,
        mean_recall_risk: with_recall.then_some(recall),
        welch,
    })
}

pub fn summarize_run(log: &RunLog) -> RunSummary {
    let n = log.traces.len().max(1) as f64;
    let steps: Vec<_> = log.traces.iter().flat_map(|t| t.info.iter()).collect();
    let acts: Vec<f64> = log.traces.iter().flat_map(|t| t.actions.iter().copied()).collect();
    RunSummary {
        age: log.age,
        seed: log.seed,
        d_total: log.traces.iter().map(EpisodeTrace::damage_total).sum::<f64>() / n,
        mean_cat: steps.iter().map(|i| i.cat).sum::<f64>() / steps.len().max(1) as f64,
        mean_action: mean(&acts),
        mean_task_reward: steps.iter().map(|i| i.task_reward).sum::<f64>() / steps.len().max(1) as f64,
    }
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Two-sided Welch t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::Core(afferent_core::Error::Validation(
            "welch test needs at least two values per sample".into(),
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (sample_var(a) / na, sample_var(b) / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df, p: 1.0, degenerate: true }
        } else {
            WelchResult { t: f64::INFINITY.copysign(ma - mb), df, p: 0.0, degenerate: true }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| HarnessError::Core(afferent_core::Error::Numerical(format!("t distribution: {e}"))))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p, degenerate: false })
}
