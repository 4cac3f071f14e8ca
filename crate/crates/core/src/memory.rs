//! Episodic memory of damage-linked events.
//!
//! Steps are streamed into a rolling buffer. A damage increment above
//! `eps_d` or a CAT above `kappa_cat` opens a pending episode keyed on the
//! pre-event window; the episode is finalized once `horizon` damage
//! increments (starting with the event step) have been summed. Retrieval is
//! an exhaustive cosine-distance kNN over finalized episodes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularizer in the inverse-distance weights.
pub const RECALL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub capacity: usize,
    pub eps_d: f64,
    pub kappa_cat: f64,
    /// Pre-event window length used for keys.
    pub pre_window: usize,
    /// Steps after the event kept with the episode.
    pub post_window: usize,
    /// Future-damage horizon.
    pub horizon: usize,
    pub k_ret: usize,
    /// Blend historical CAT into the mechanical CAT.
    pub cat_bias: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            capacity: 512,
            eps_d: 1e-3,
            kappa_cat: 0.7,
            pre_window: 8,
            post_window: 4,
            horizon: 10,
            k_ret: 5,
            cat_bias: false,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.horizon == 0 || self.k_ret == 0 {
            return Err(Error::Config("capacity, horizon and k_ret must be positive".into()));
        }
        if self.pre_window < 2 {
            return Err(Error::Config("pre_window must be at least 2".into()));
        }
        if self.post_window > self.horizon {
            return Err(Error::Config("post_window cannot exceed horizon".into()));
        }
        Ok(())
    }
}

/// What the memory sees of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub x: Vec<f64>,
    pub activations: Vec<f64>,
    pub cat: f64,
    pub action: f64,
    pub delta_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub key: Vec<f64>,
    /// Damage summed over the horizon starting at the event.
    pub delta: f64,
    pub scenario: String,
    pub t_event: usize,
    pub finalized: bool,
    /// Mean CAT over the pre-event window, before key normalization.
    pub cat_hist: f64,
    /// Pre-event window followed by up to `post_window` later steps.
    #[serde(skip)]
    pub window: Vec<StepRecord>,
    #[serde(skip)]
    seq: u64,
    #[serde(skip)]
    remaining: usize,
    #[serde(skip)]
    pre_len: usize,
}

/// Line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogEntry {
    pub t_event: usize,
    pub scenario: String,
    pub key: Vec<f64>,
    pub delta: f64,
    pub cat_hist: f64,
}

impl From<&Episode> for EpisodeLogEntry {
    fn from(e: &Episode) -> Self {
        Self {
            t_event: e.t_event,
            scenario: e.scenario.clone(),
            key: e.key.clone(),
            delta: e.delta,
            cat_hist: e.cat_hist,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub y_hat: f64,
    pub d_mean: f64,
}

/// Unit-norm context key `[mean x, mean activations, mean CAT, dx/dt]` of a
/// window, together with the unnormalized mean CAT.
pub fn encode_key(window: &[StepRecord]) -> Result<(Vec<f64>, f64)> {
    if window.len() < 2 {
        return Err(Error::Validation(format!("key window needs at least 2 steps, got {}", window.len())));
    }
    let n = window.len() as f64;
    let (k, m) = (window[0].x.len(), window[0].activations.len());
    let mut key = vec![0.0; 2 * k + m + 1];
    for rec in window {
        if rec.x.len() != k || rec.activations.len() != m {
            return Err(Error::Validation("window records have inconsistent dimensions".into()));
        }
        for (acc, v) in key[..k].iter_mut().zip(&rec.x) {
            *acc += v / n;
        }
        for (acc, v) in key[k..k + m].iter_mut().zip(&rec.activations) {
            *acc += v / n;
        }
        key[k + m] += rec.cat / n;
    }
    let cat_mean = key[k + m];
    let (first, last) = (&window[0].x, &window[window.len() - 1].x);
    for i in 0..k {
        key[k + m + 1 + i] = (last[i] - first[i]) / (n - 1.0);
    }
    normalize(&mut key);
    Ok((key, cat_mean))
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 || !norm.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Cosine distance between unit vectors, clamped to [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot).clamp(0.0, 2.0)
}

/// Inverse-distance weighted mean of retrieved future damage.
pub fn recall_risk(retrieved: &[(&Episode, f64)]) -> RecallResult {
    if retrieved.is_empty() {
        return RecallResult::default();
    }
    let weights: Vec<f64> = retrieved.iter().map(|(_, d)| 1.0 / (d + RECALL_EPS)).collect();
    let total: f64 = weights.iter().sum();
    let y_hat = retrieved.iter().zip(&weights).map(|((e, _), w)| w / total * e.delta).sum();
    let d_mean = retrieved.iter().map(|(_, d)| d).sum::<f64>() / retrieved.len() as f64;
    RecallResult { y_hat, d_mean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub config: MemoryConfig,
    episodes: VecDeque<Episode>,
    #[serde(skip)]
    pending: Vec<Episode>,
    #[serde(skip)]
    buffer: VecDeque<StepRecord>,
    #[serde(skip)]
    next_seq: u64,
}

impl MemoryStore {
    pub fn new(config: MemoryConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, episodes: VecDeque::new(), pending: Vec::new(), buffer: VecDeque::new(), next_seq: 0 })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Finalized episodes, oldest first.
    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Stream one step. Returns whether it opened a new episode.
    pub fn maybe_capture(&mut self, record: StepRecord, scenario: &str, t: usize) -> bool {
        let cfg = &self.config;
        let triggered = record.delta_d > cfg.eps_d || record.cat > cfg.kappa_cat;

        self.buffer.push_back(record.clone());
        while self.buffer.len() > cfg.pre_window {
            self.buffer.pop_front();
        }

        // Advance episodes opened on earlier steps.
        let post_window = cfg.post_window;
        for ep in &mut self.pending {
            ep.delta += record.delta_d;
            ep.remaining -= 1;
            if ep.window.len() < ep.pre_len + post_window {
                ep.window.push(record.clone());
            }
        }
        self.finalize_ready();

        if !triggered || self.buffer.len() < 2 {
            return false;
        }
        let window: Vec<StepRecord> = self.buffer.iter().cloned().collect();
        let Ok((key, cat_hist)) = encode_key(&window) else {
            return false;
        };
        let episode = Episode {
            key,
            delta: record.delta_d,
            scenario: scenario.to_string(),
            t_event: t,
            finalized: false,
            cat_hist,
            pre_len: window.len(),
            window,
            seq: self.next_seq,
            remaining: self.config.horizon - 1,
        };
        self.next_seq += 1;
        self.pending.push(episode);
        self.finalize_ready();
        true
    }

    fn finalize_ready(&mut self) {
        let (ready, waiting): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|e| e.remaining == 0);
        self.pending = waiting;
        for ep in ready {
            self.insert(ep);
        }
    }

    fn insert(&mut self, mut ep: Episode) {
        ep.finalized = true;
        ep.delta = ep.delta.max(0.0);
        self.episodes.push_back(ep);
        while self.episodes.len() > self.config.capacity {
            self.episodes.pop_front();
        }
    }

    /// End of a rollout: finalize truncated episodes with their partial sums
    /// and clear the step buffer.
    pub fn end_episode(&mut self) {
        let mut pending = std::mem::take(&mut self.pending);
        pending.sort_by_key(|e| e.seq);
        for ep in pending {
            self.insert(ep);
        }
        self.buffer.clear();
    }

    /// Insert an already-built episode (e.g. loaded from a log).
    pub fn push_episode(&mut self, key: Vec<f64>, delta: f64, scenario: &str, t_event: usize, cat_hist: f64) {
        let ep = Episode {
            key,
            delta,
            scenario: scenario.to_string(),
            t_event,
            finalized: true,
            cat_hist,
            window: Vec::new(),
            seq: self.next_seq,
            remaining: 0,
            pre_len: 0,
        };
        self.next_seq += 1;
        self.insert(ep);
    }

    /// Key of the current rolling buffer, if it holds at least two steps.
    pub fn current_key(&self) -> Option<Vec<f64>> {
        if self.buffer.len() < 2 {
            return None;
        }
        let window: Vec<StepRecord> = self.buffer.iter().cloned().collect();
        encode_key(&window).ok().map(|(k, _)| k)
    }

    /// The `k` nearest finalized episodes by cosine distance; ties go to the
    /// older episode.
    pub fn retrieve(&self, key: &[f64], k: usize) -> Vec<(&Episode, f64)> {
        let mut scored: Vec<(&Episode, f64)> =
            self.episodes.iter().map(|e| (e, cosine_distance(key, &e.key))).collect();
        // episodes are in insertion order, so a stable sort keeps older first
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        scored.truncate(k);
        scored
    }

    /// Recall risk for the current buffer state.
    pub fn recall(&self) -> RecallResult {
        match self.current_key() {
            Some(key) => recall_risk(&self.retrieve(&key, self.config.k_ret)),
            None => RecallResult::default(),
        }
    }

    /// Blend in historical CAT once three episodes of this scenario exist.
    pub fn apply_memory_bias(&self, cat_mech: f64, scenario: &str) -> f64 {
        let hist: Vec<f64> = self.episodes.iter().filter(|e| e.scenario == scenario).map(|e| e.cat_hist).collect();
        if hist.len() < 3 {
            return cat_mech;
        }
        let mean = hist.iter().sum::<f64>() / hist.len() as f64;
        (0.7 * cat_mech + 0.3 * mean).clamp(0.0, 1.0)
    }

    /// Concatenate another store's episodes after ours and re-apply capacity.
    pub fn merge(&mut self, other: &MemoryStore) {
        for e in other.episodes() {
            self.push_episode(e.key.clone(), e.delta, &e.scenario, e.t_event, e.cat_hist);
        }
    }

    pub fn log_entries(&self) -> Vec<EpisodeLogEntry> {
        self.episodes.iter().map(EpisodeLogEntry::from).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: f64, cat: f64, delta_d: f64) -> StepRecord {
        StepRecord { x: vec![x, 0.5 * x, 0.1], activations: vec![cat, cat], cat, action: x, delta_d }
    }

    fn store(capacity: usize) -> MemoryStore {
        MemoryStore::new(MemoryConfig { capacity, ..MemoryConfig::default() }).unwrap()
    }

    fn episode(key: Vec<f64>, delta: f64) -> Episode {
        Episode {
            key,
            delta,
            scenario: "normal".into(),
            t_event: 0,
            finalized: true,
            cat_hist: 0.0,
            window: vec![],
            seq: 0,
            remaining: 0,
            pre_len: 0,
        }
    }

    #[test]
    fn key_layout() {
        let window = vec![rec(0.4, 0.2, 0.0); 5];
        let (key, cat_mean) = encode_key(&window).unwrap();
        assert_eq!(key.len(), 2 * 3 + 2 + 1);
        assert!(key[6..].iter().all(|&v| v == 0.0));
        assert!((key.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((cat_mean - 0.2).abs() < 1e-15);
        assert!(encode_key(&window[..1]).is_err());
    }

    #[test]
    fn key_derivative_is_endpoint_difference() {
        let window = vec![rec(0.1, 0.0, 0.0), rec(0.9, 0.0, 0.0), rec(0.4, 0.0, 0.0)];
        let (key, _) = encode_key(&window).unwrap();
        // unnormalized: mean x0 = 1.4 / 3, dx0 = (0.4 - 0.1) / 2 = 0.15
        assert!((key[6] / key[0] - 0.15 / (1.4 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn no_capture_below_thresholds() {
        let mut s = store(8);
        assert!(!s.maybe_capture(rec(0.5, 0.1, 0.0), "normal", 0));
        assert!(!s.maybe_capture(rec(0.5, 0.1, 0.0), "normal", 1));
        // exactly eps_d and exactly kappa_cat do not trigger
        assert!(!s.maybe_capture(rec(0.5, 0.1, 1e-3), "normal", 2));
        assert!(!s.maybe_capture(rec(0.5, 0.7, 0.0), "normal", 3));
        assert!(s.maybe_capture(rec(0.5, 0.1, 1.1e-3), "normal", 4));
        assert!(s.maybe_capture(rec(0.5, 0.71, 0.0), "normal", 5));
    }

    #[test]
    fn future_damage_is_horizon_sum() {
        let mut s = store(8);
        let increments: Vec<f64> = (0..14).map(|i| if i == 3 { 0.01 } else { 1e-4 * i as f64 }).collect();
        let mut captured_at = None;
        for (t, &dd) in increments.iter().enumerate() {
            if s.maybe_capture(rec(0.3, 0.1, dd), "normal", t) && captured_at.is_none() {
                captured_at = Some(t);
            }
        }
        assert_eq!(captured_at, Some(3));
        assert_eq!(s.len(), 1);
        let expected: f64 = increments[3..13].iter().sum();
        let got = s.episodes().next().unwrap().delta;
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert_eq!(s.episodes().next().unwrap().window.len(), 4 + 4);
    }

    #[test]
    fn truncated_episode_keeps_partial_sum() {
        let mut s = store(8);
        s.maybe_capture(rec(0.3, 0.1, 0.0), "normal", 0);
        s.maybe_capture(rec(0.3, 0.9, 0.002), "normal", 1);
        s.maybe_capture(rec(0.3, 0.1, 0.0005), "normal", 2);
        assert_eq!(s.len(), 0);
        assert_eq!(s.pending_len(), 1);
        s.end_episode();
        assert_eq!(s.len(), 1);
        assert!((s.episodes().next().unwrap().delta - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn fifo_eviction() {
        let mut s = store(3);
        for i in 0..4 {
            s.push_episode(vec![1.0, 0.0], i as f64, "normal", i, 0.0);
            assert!(s.len() <= 3);
        }
        let deltas: Vec<f64> = s.episodes().map(|e| e.delta).collect();
        assert_eq!(deltas, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn retrieve_single_and_exact() {
        let mut s = store(8);
        let c = 0.6f64;
        s.push_episode(vec![c, (1.0 - c * c).sqrt()], 0.5, "normal", 0, 0.0);
        let got = s.retrieve(&[1.0, 0.0], 5);
        assert_eq!(got.len(), 1);
        assert!((got[0].1 - (1.0 - c)).abs() < 1e-15);

        s.push_episode(vec![0.0, 1.0], 0.9, "normal", 1, 0.0);
        let got = s.retrieve(&[0.0, 1.0], 5);
        assert_eq!(got[0].0.delta, 0.9);
        assert_eq!(got[0].1, 0.0);
    }

    #[test]
    fn ties_prefer_older() {
        let mut s = store(8);
        s.push_episode(vec![1.0, 0.0], 1.0, "normal", 0, 0.0);
        s.push_episode(vec![1.0, 0.0], 2.0, "normal", 1, 0.0);
        let got = s.retrieve(&[1.0, 0.0], 1);
        assert_eq!(got[0].0.delta, 1.0);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_risk(&[]), RecallResult { y_hat: 0.0, d_mean: 0.0 });
        let e = episode(vec![1.0], 0.7);
        let r = recall_risk(&[(&e, 0.3)]);
        assert!((r.y_hat - 0.7).abs() < 1e-15 && (r.d_mean - 0.3).abs() < 1e-15);

        let (a, b) = (episode(vec![1.0], 1.0), episode(vec![1.0], 3.0));
        let r = recall_risk(&[(&a, 0.1), (&b, 0.3)]);
        // w = (1/0.100001, 1/0.300001) → y = (1*w1 + 3*w2)/(w1+w2)
        let (w1, w2) = (1.0 / 0.100001, 1.0 / 0.300001);
        assert!((r.y_hat - (w1 + 3.0 * w2) / (w1 + w2)).abs() < 1e-12);
        assert!((r.y_hat - 1.5).abs() < 1e-4);
        assert!((r.d_mean - 0.2).abs() < 1e-15);
    }

    #[test]
    fn recall_invariant_to_duplication() {
        let eps: Vec<Episode> = (0..4).map(|i| episode(vec![1.0], 0.3 * i as f64)).collect();
        let once: Vec<(&Episode, f64)> = eps.iter().zip([0.1, 0.5, 0.2, 0.9]).map(|(e, d)| (e, d)).collect();
        let mut twice = once.clone();
        twice.extend(once.iter().cloned());
        assert!((recall_risk(&once).y_hat - recall_risk(&twice).y_hat).abs() < 1e-14);
    }

    #[test]
    fn memory_bias() {
        let mut s = store(8);
        assert_eq!(s.apply_memory_bias(0.2, "normal"), 0.2);
        for t in 0..3 {
            s.push_episode(vec![1.0], 0.0, "normal", t, 0.8);
        }
        assert!((s.apply_memory_bias(0.2, "normal") - 0.38).abs() < 1e-15);
        assert_eq!(s.apply_memory_bias(0.2, "acl_deficient"), 0.2);

        let mut fixed = store(8);
        for t in 0..3 {
            fixed.push_episode(vec![1.0], 0.0, "normal", t, 0.45);
        }
        assert!((fixed.apply_memory_bias(0.45, "normal") - 0.45).abs() < 1e-15);
    }

    #[test]
    fn identical_streams_give_identical_stores() {
        let run = || {
            let mut s = store(16);
            for t in 0..60 {
                let v = ((t * 37) % 11) as f64 / 10.0;
                s.maybe_capture(rec(v, v, if t % 9 == 0 { 0.002 } else { 0.0 }), "normal", t);
            }
            s.end_episode();
            s.log_entries()
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }
}
