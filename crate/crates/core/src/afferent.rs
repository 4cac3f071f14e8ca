//! Afferent units, the afferent array and its flat genome encoding.
//!
//! Each unit projects the shared feature vector onto its own unit-norm
//! direction, passes the projection through a gained logistic threshold and
//! integrates the result with a leaky first-order filter. The array output
//! (the CAT) is a convex combination of unit activations.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

const NORM_FLOOR: f64 = 1e-12;
const ALPHA_FLOOR: f64 = 1e-3;

/// Numerically stable logistic function.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse of `softplus` for `y > 0`.
#[inline]
pub(crate) fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfferentUnitParams {
    /// Unit-norm feature projection.
    pub w: Vec<f64>,
    /// Gain of the logistic threshold.
    pub alpha: f64,
    /// Activation threshold in [0, 1].
    pub theta: f64,
    /// Time constant, in the same units as the step size.
    pub tau: f64,
}

impl AfferentUnitParams {
    pub fn new(w: Vec<f64>, alpha: f64, theta: f64, tau: f64) -> Result<Self> {
        let unit = Self { w, alpha, theta, tau };
        unit.validate()?;
        Ok(unit)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.w, "w")?;
        let norm = l2(&self.w);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("|w| = {norm}, expected 1")));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation(format!("alpha = {} must be > 0", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Validation(format!("theta = {} outside [0,1]", self.theta)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Validation(format!("tau = {} must be > 0", self.tau)));
        }
        Ok(())
    }

    /// Integration coefficient `dt / (tau + dt)`.
    #[inline]
    pub fn beta(&self, dt: f64) -> f64 {
        dt / (self.tau + dt)
    }

    #[inline]
    pub fn project(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum()
    }
}

/// One leaky-integrator update of a unit's activation.
#[inline]
pub fn step_unit(unit: &AfferentUnitParams, a_prev: f64, signal: f64, dt: f64) -> f64 {
    let beta = unit.beta(dt);
    let drive = logistic(unit.alpha * (signal - unit.theta));
    ((1.0 - beta) * a_prev + beta * drive).clamp(0.0, 1.0)
}

/// `M` afferent units sharing a `K`-dimensional input, plus aggregation
/// weights and the running activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfferentArray {
    units: Vec<AfferentUnitParams>,
    v: Vec<f64>,
    state: Vec<f64>,
    dt: f64,
}

impl AfferentArray {
    pub fn new(units: Vec<AfferentUnitParams>, v: Vec<f64>, dt: f64) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Config("afferent array needs at least one unit".into()));
        }
        if units.len() != v.len() {
            return Err(Error::Config(format!("{} units but {} aggregation weights", units.len(), v.len())));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("dt = {dt} must be > 0")));
        }
        let k = units[0].w.len();
        for (i, u) in units.iter().enumerate() {
            if u.w.len() != k {
                return Err(Error::Config(format!("unit {i} has {} features, expected {k}", u.w.len())));
            }
            u.validate()?;
        }
        ensure_finite(&v, "v")?;
        if v.iter().any(|&vi| vi < 0.0) {
            return Err(Error::Validation("aggregation weights must be non-negative".into()));
        }
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("aggregation weights sum to {total}")));
        }
        let m = units.len();
        Ok(Self { units, v, state: vec![0.0; m], dt })
    }

    pub fn m(&self) -> usize {
        self.units.len()
    }

    pub fn k(&self) -> usize {
        self.units[0].w.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn units(&self) -> &[AfferentUnitParams] {
        &self.units
    }

    pub fn weights(&self) -> &[f64] {
        &self.v
    }

    pub fn activations(&self) -> &[f64] {
        &self.state
    }

    /// Current CAT from the stored activations, without stepping.
    pub fn current_cat(&self) -> f64 {
        aggregate(&self.v, &self.state)
    }

    pub fn reset_state(&mut self) {
        self.state.iter_mut().for_each(|a| *a = 0.0);
    }

    /// Overwrite the activations, e.g. to start from a known state.
    pub fn set_state(&mut self, activations: &[f64]) -> Result<()> {
        if activations.len() != self.m() {
            return Err(Error::Validation(format!("expected {} activations, got {}", self.m(), activations.len())));
        }
        if activations.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Validation("activations must lie in [0,1]".into()));
        }
        self.state.copy_from_slice(activations);
        Ok(())
    }

    /// Advance every unit by one step on input `x` and return the new CAT.
    pub fn compute_cat(&mut self, x: &[f64]) -> Result<f64> {
        if x.len() != self.k() {
            return Err(Error::Validation(format!("feature vector has length {}, expected {}", x.len(), self.k())));
        }
        ensure_finite(x, "x")?;
        for (unit, a) in self.units.iter().zip(self.state.iter_mut()) {
            *a = step_unit(unit, *a, unit.project(x), self.dt);
        }
        Ok(self.current_cat())
    }
}

#[inline]
fn aggregate(v: &[f64], a: &[f64]) -> f64 {
    v.iter().zip(a).map(|(v, a)| v * a).sum::<f64>().clamp(0.0, 1.0)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Flat, unconstrained parameter vector of an afferent array.
///
/// Per unit the block layout is `[w_raw (K), alpha_raw, theta_raw, tau_raw, v_raw]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub raw: Vec<f64>,
    pub m: usize,
    pub k: usize,
}

impl Genome {
    pub fn new(raw: Vec<f64>, m: usize, k: usize) -> Result<Self> {
        let expected = Self::len_for(m, k);
        if raw.len() != expected || m == 0 || k == 0 {
            return Err(Error::Config(format!(
                "genome length {} does not match m={m}, k={k} (expected {expected})",
                raw.len()
            )));
        }
        Ok(Self { raw, m, k })
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        Self { raw: vec![0.0; Self::len_for(m, k)], m, k }
    }

    pub fn len_for(m: usize, k: usize) -> usize {
        m * (k + 4)
    }

    pub fn dim(&self) -> usize {
        self.raw.len()
    }

    /// Stable content hash, used to check that training leaves genomes untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::rng::hash3(self.m as u64, self.k as u64, 0);
        for (i, x) in self.raw.iter().enumerate() {
            h = crate::rng::hash3(h, i as u64, x.to_bits());
        }
        h
    }
}

/// Map an unconstrained genome onto valid array parameters.
pub fn decode_genome(genome: &Genome, dt: f64) -> Result<AfferentArray> {
    let (m, k) = (genome.m, genome.k);
    if genome.raw.len() != Genome::len_for(m, k) {
        return Err(Error::Config(format!("genome length {} does not match m={m}, k={k}", genome.raw.len())));
    }
    ensure_finite(&genome.raw, "genome")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Validation(format!("dt = {dt} must be > 0")));
    }
    let mut units = Vec::with_capacity(m);
    let mut v_raw = Vec::with_capacity(m);
    for block in genome.raw.chunks_exact(k + 4) {
        let w_raw = &block[..k];
        let norm = l2(w_raw);
        let w = if norm < NORM_FLOOR {
            let mut e = vec![0.0; k];
            e[0] = 1.0;
            e
        } else {
            w_raw.iter().map(|x| x / norm).collect()
        };
        units.push(AfferentUnitParams {
            w,
            alpha: softplus(block[k]) + ALPHA_FLOOR,
            theta: block[k + 1].clamp(0.0, 1.0),
            tau: softplus(block[k + 2]) + dt / 10.0,
        });
        v_raw.push(block[k + 3]);
    }
    AfferentArray::new(units, softmax(&v_raw), dt)
}

/// Inverse of [`decode_genome`] on constrained parameters.
pub fn encode_genome(array: &AfferentArray) -> Genome {
    let (m, k, dt) = (array.m(), array.k(), array.dt());
    let mut raw = Vec::with_capacity(Genome::len_for(m, k));
    for (unit, &v) in array.units.iter().zip(&array.v) {
        raw.extend_from_slice(&unit.w);
        raw.push(softplus_inv((unit.alpha - ALPHA_FLOOR).max(f64::MIN_POSITIVE)));
        raw.push(unit.theta);
        raw.push(softplus_inv((unit.tau - dt / 10.0).max(f64::MIN_POSITIVE)));
        raw.push(v.max(f64::MIN_POSITIVE).ln());
    }
    Genome { raw, m, k }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Rule-based envelope detector: unit `i` watches feature `i mod K` alone.
pub fn hand_designed_array(m: usize, k: usize, dt: f64) -> Result<AfferentArray> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let units = (0..m)
        .map(|i| {
            let mut w = vec![0.0; k];
            w[i % k] = 1.0;
            AfferentUnitParams { w, alpha: 8.0, theta: 0.6, tau: 5.0 * dt }
        })
        .collect();
    AfferentArray::new(units, vec![1.0 / m as f64; m], dt)
}

pub fn hand_designed_genome(m: usize, k: usize, dt: f64) -> Result<Genome> {
    Ok(encode_genome(&hand_designed_array(m, k, dt)?))
}

/// Metadata stored alongside a persisted genome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenomeMeta {
    pub generation: u32,
    pub fitness: f64,
}

/// On-disk genome document `{m, k, raw, meta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeFile {
    pub m: usize,
    pub k: usize,
    pub raw: Vec<f64>,
    pub meta: GenomeMeta,
}

const GENOME_MAGIC: &[u8; 4] = b"AFGN";
const GENOME_VERSION: u32 = 1;

impl GenomeFile {
    pub fn new(genome: &Genome, meta: GenomeMeta) -> Self {
        Self { m: genome.m, k: genome.k, raw: genome.raw.clone(), meta }
    }

    pub fn genome(&self) -> Result<Genome> {
        Genome::new(self.raw.clone(), self.m, self.k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(s)?;
        file.genome()?;
        Ok(file)
    }

    /// Little-endian layout: magic, version, m, k, generation (u32 each),
    /// fitness (f64), then `m*(k+4)` f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.raw.len());
        out.extend_from_slice(GENOME_MAGIC);
        out.extend_from_slice(&GENOME_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&self.meta.generation.to_le_bytes());
        out.extend_from_slice(&self.meta.fitness.to_le_bytes());
        for x in &self.raw {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Validation(format!("genome file: {msg}"));
        if bytes.len() < 28 || &bytes[..4] != GENOME_MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if u32_at(4) != GENOME_VERSION {
            return Err(bad("unsupported version"));
        }
        let (m, k) = (u32_at(8) as usize, u32_at(12) as usize);
        let generation = u32_at(16);
        let fitness = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let body = &bytes[28..];
        if body.len() != 8 * Genome::len_for(m, k) {
            return Err(bad("body length does not match m and k"));
        }
        let raw = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let file = Self { m, k, raw, meta: GenomeMeta { generation, fitness } };
        file.genome()?;
        Ok(file)
    }

    /// Write as binary for `.bin` paths and JSON otherwise.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "bin") {
            std::fs::write(path, self.to_bytes())?;
        } else {
            std::fs::write(path, self.to_json()?)?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(GENOME_MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            Self::from_json(std::str::from_utf8(&bytes).map_err(|e| Error::Validation(e.to_string()))?)
        }
    }
}
