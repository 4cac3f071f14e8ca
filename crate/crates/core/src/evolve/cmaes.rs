//! CMA-ES with the standard strategy-parameter defaults, maximizing.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl StrategyParams {
    pub fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self { lambda, mu, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    pub params: StrategyParams,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    rng: ChaCha8Rng,
}

/// What `tell` noticed about the fitness values it was given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TellReport {
    /// Candidates with non-finite fitness, ranked last.
    pub non_finite: Vec<usize>,
    /// Set when every candidate tied and no update was made.
    pub all_tied: bool,
}

impl EvolutionState {
    pub fn new(mean: Vec<f64>, sigma: f64, popsize: usize, seed: u64) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Config("search space must be non-empty".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma = {sigma} must be > 0")));
        }
        if popsize < 2 {
            return Err(Error::Config("population size must be at least 2".into()));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            params: StrategyParams::new(n, popsize),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Standard population size `4 + ⌊3 ln n⌋`.
    pub fn default_popsize(n: usize) -> usize {
        4 + (3.0 * (n as f64).ln()).floor() as usize
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Replace the covariance and refresh its decomposition.
    pub fn set_cov(&mut self, cov: DMatrix<f64>) -> Result<()> {
        if cov.nrows() != self.dim() || cov.ncols() != self.dim() {
            return Err(Error::Validation("covariance has the wrong shape".into()));
        }
        self.cov = cov;
        self.decompose()
    }

    /// Draw `λ` candidates `mean + σ B D z`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..self.params.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
                let y = &self.basis * z.component_mul(&self.scales);
                (&self.mean + self.sigma * y).iter().copied().collect()
            })
            .collect()
    }

    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<TellReport> {
        let lambda = self.params.lambda;
        let n = self.dim();
        if candidates.len() != lambda || fitness.len() != lambda {
            return Err(Error::Validation(format!(
                "expected {lambda} candidates and fitness values, got {} and {}",
                candidates.len(),
                fitness.len()
            )));
        }
        if candidates.iter().any(|c| c.len() != n) {
            return Err(Error::Validation("candidate dimension mismatch".into()));
        }
        let mut report =
            TellReport { non_finite: (0..lambda).filter(|&i| !fitness[i].is_finite()).collect(), all_tied: false };
        self.generation += 1;

        let key = |i: usize| if fitness[i].is_finite() { fitness[i] } else { f64::NEG_INFINITY };
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
        if key(order[0]) == key(order[lambda - 1]) {
            report.all_tied = true;
            return Ok(report);
        }
        let weights = self.tied_weights(&order, &key);

        let ys: Vec<DVector<f64>> =
            candidates.iter().map(|c| (DVector::from_column_slice(c) - &self.mean) / self.sigma).collect();
        let mut y_w = DVector::zeros(n);
        for (i, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                y_w += *w * &ys[i];
            }
        }
        let p = self.params.clone();
        self.mean += self.sigma * &y_w;

        let inv_sqrt = &self.basis * DMatrix::from_diagonal(&self.scales.map(|d| 1.0 / d)) * self.basis.transpose();
        self.p_sigma =
            (1.0 - p.c_sigma) * &self.p_sigma + (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt() * (&inv_sqrt * &y_w);
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - p.c_sigma).powi(2 * self.generation as i32);
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - p.c_c) * &self.p_c + h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt() * &y_w;
        let delta_h = (1.0 - h) * p.c_c * (2.0 - p.c_c);

        let mut rank_mu = DMatrix::zeros(n, n);
        for (i, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                rank_mu += *w * &ys[i] * ys[i].transpose();
            }
        }
        let rank_one = &self.p_c * self.p_c.transpose();
        self.cov = (1.0 - p.c_1 - p.c_mu) * &self.cov + p.c_1 * (rank_one + delta_h * &self.cov) + p.c_mu * rank_mu;

        let exponent = (p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0);
        self.sigma *= exponent.min(1.0).exp();
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Numerical(format!("step size became {}", self.sigma)));
        }
        self.decompose()?;
        Ok(report)
    }

    /// Recombination weights per candidate index; tied candidates share the
    /// mean of the weights their rank positions would receive.
    fn tied_weights(&self, order: &[usize], key: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let lambda = order.len();
        let by_rank: Vec<f64> = (0..lambda).map(|r| self.params.weights.get(r).copied().unwrap_or(0.0)).collect();
        let mut out = vec![0.0; lambda];
        let mut start = 0;
        while start < lambda {
            let mut end = start + 1;
            while end < lambda && key(order[end]) == key(order[start]) {
                end += 1;
            }
            let shared = by_rank[start..end].iter().sum::<f64>() / (end - start) as f64;
            for &i in &order[start..end] {
                out[i] = shared;
            }
            start = end;
        }
        out
    }

    /// Symmetrize, eigendecompose, and floor eigenvalues at [`EIGEN_FLOOR`].
    fn decompose(&mut self) -> Result<()> {
        for attempt in 0..2 {
            let sym = (&self.cov + self.cov.transpose()) * 0.5;
            if !sym.iter().all(|v| v.is_finite()) {
                if attempt == 0 {
                    self.cov = DMatrix::identity(self.dim(), self.dim());
                    continue;
                }
                break;
            }
            let eig = SymmetricEigen::new(sym);
            let floored = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
            let basis = eig.eigenvectors;
            let cov = &basis * DMatrix::from_diagonal(&floored) * basis.transpose();
            self.cov = (&cov + cov.transpose()) * 0.5;
            self.scales = floored.map(f64::sqrt);
            self.basis = basis;
            return Ok(());
        }
        Err(Error::Numerical("covariance decomposition failed after repair".into()))
    }
}
