//! Predictive-discrepancy risk channel.
//!
//! A linear safe-state model, fit on healthy rollouts, predicts the next
//! feature vector. The weighted prediction error is squashed into a second
//! risk signal and blended with the envelope CAT.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::afferent::logistic;
use crate::error::{ensure_finite, Error, Result};

const RIDGE_PENALTY: f64 = 1e-6;

/// One transition `(x_t, a_t, s_t) -> x_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub action: f64,
    pub context: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// `x_{t+1} ≈ A [x_t; a_t; s_t] + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeStateModel {
    /// Row-major `k × (k + 1 + s)` coefficients.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub k: usize,
    pub s: usize,
    pub residual_rms: f64,
    /// Set when the design was rank deficient and a ridge penalty was used.
    #[serde(default)]
    pub ridge_fallback: bool,
}

impl SafeStateModel {
    pub fn predict(&self, x: &[f64], action: f64, context: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.k || context.len() != self.s {
            return Err(Error::Validation(format!(
                "model expects k={} and s={}, got {} and {}",
                self.k,
                self.s,
                x.len(),
                context.len()
            )));
        }
        Ok(self
            .a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| {
                let mut acc = *b + row[self.k] * action;
                for (r, xi) in row[..self.k].iter().zip(x) {
                    acc += r * xi;
                }
                for (r, si) in row[self.k + 1..].iter().zip(context) {
                    acc += r * si;
                }
                acc
            })
            .collect())
    }
}

/// Least-squares fit of the safe-state model.
pub fn fit_safe_model(rollouts: &[Transition]) -> Result<SafeStateModel> {
    let first = rollouts.first().ok_or_else(|| Error::Validation("no transitions to fit".into()))?;
    let (k, s) = (first.x.len(), first.context.len());
    let cols = k + 2 + s;
    if rollouts.len() < cols {
        return Err(Error::Validation(format!("need at least {cols} transitions, got {}", rollouts.len())));
    }
    let n = rollouts.len();
    let mut design = DMatrix::<f64>::zeros(n, cols);
    let mut target = DMatrix::<f64>::zeros(n, k);
    for (i, tr) in rollouts.iter().enumerate() {
        if tr.x.len() != k || tr.x_next.len() != k || tr.context.len() != s {
            return Err(Error::Validation(format!("transition {i} has inconsistent dimensions")));
        }
        ensure_finite(&tr.x, "x")?;
        ensure_finite(&tr.x_next, "x_next")?;
        ensure_finite(&tr.context, "context")?;
        for (j, v) in tr.x.iter().enumerate() {
            design[(i, j)] = *v;
        }
        design[(i, k)] = tr.action;
        for (j, v) in tr.context.iter().enumerate() {
            design[(i, k + 1 + j)] = *v;
        }
        design[(i, cols - 1)] = 1.0;
        for (j, v) in tr.x_next.iter().enumerate() {
            target[(i, j)] = *v;
        }
    }

    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * n.max(cols) as f64;
    let rank = svd.singular_values.iter().filter(|&&sv| sv > tol).count();
    let (coef, ridge_fallback) = if rank == cols {
        let coef = svd.solve(&target, tol).map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
        (coef, false)
    } else {
        let gram = design.transpose() * &design + DMatrix::identity(cols, cols) * RIDGE_PENALTY;
        let rhs = design.transpose() * &target;
        let coef =
            gram.cholesky().ok_or_else(|| Error::Numerical("ridge system not positive definite".into()))?.solve(&rhs);
        (coef, true)
    };

    let resid = &target - &design * &coef;
    let residual_rms = (resid.iter().map(|r| r * r).sum::<f64>() / (n * k) as f64).sqrt();
    // coef is cols × k; row j of A is column j of coef without the bias row.
    let a = (0..k).map(|out| (0..cols - 1).map(|c| coef[(c, out)]).collect()).collect();
    let b = (0..k).map(|out| coef[(cols - 1, out)]).collect();
    let model = SafeStateModel { a, b, k, s, residual_rms, ridge_fallback };
    if !model.residual_rms.is_finite() {
        return Err(Error::Numerical("non-finite safe-state fit".into()));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyParams {
    pub w_delta: Vec<f64>,
    pub kappa: f64,
    pub delta0: f64,
    pub lambda_env: f64,
    pub lambda_pred: f64,
}

impl DiscrepancyParams {
    pub fn new(w_delta: Vec<f64>, kappa: f64, delta0: f64, lambda_env: f64, lambda_pred: f64) -> Result<Self> {
        let p = Self { w_delta, kappa, delta0, lambda_env, lambda_pred };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.w_delta, "w_delta")?;
        if self.w_delta.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("w_delta must be non-negative".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa = {} must be > 0", self.kappa)));
        }
        if !(self.delta0 >= 0.0 && self.delta0.is_finite()) {
            return Err(Error::Config(format!("delta0 = {} must be >= 0", self.delta0)));
        }
        if self.lambda_env < 0.0 || self.lambda_pred < 0.0 || !(self.lambda_env + self.lambda_pred > 0.0) {
            return Err(Error::Config("combination weights must be >= 0 with positive sum".into()));
        }
        Ok(())
    }
}

/// `‖diag(w_delta) (x_next − x_hat)‖₂`.
pub fn discrepancy(x_next: &[f64], x_hat: &[f64], p: &DiscrepancyParams) -> Result<f64> {
    if x_next.len() != x_hat.len() || x_next.len() != p.w_delta.len() {
        return Err(Error::Validation(format!(
            "discrepancy lengths differ: {}, {}, {}",
            x_next.len(),
            x_hat.len(),
            p.w_delta.len()
        )));
    }
    Ok(x_next.iter().zip(x_hat).zip(&p.w_delta).map(|((a, b), w)| (w * (a - b)).powi(2)).sum::<f64>().sqrt())
}

pub fn pred_signal(delta: f64, p: &DiscrepancyParams) -> f64 {
    logistic(p.kappa * (delta - p.delta0))
}

/// Normalized blend of envelope and predictive signals.
pub fn combine_cat(c_env: f64, c_pred: f64, p: &DiscrepancyParams) -> Result<f64> {
    let total = p.lambda_env + p.lambda_pred;
    if !(total > 0.0) {
        return Err(Error::Config("lambda_env + lambda_pred must be positive".into()));
    }
    Ok(((p.lambda_env * c_env + p.lambda_pred * c_pred) / total).clamp(0.0, 1.0))
}

/// Linear-interpolated quantile (`q` in [0, 1]) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// A fitted model plus calibrated discrepancy parameters, with the
/// one-step-ahead prediction it is waiting to check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveChannel {
    pub model: SafeStateModel,
    pub params: DiscrepancyParams,
    #[serde(skip)]
    pending: Option<Vec<f64>>,
}

impl PredictiveChannel {
    pub fn new(model: SafeStateModel, params: DiscrepancyParams) -> Result<Self> {
        params.validate()?;
        if params.w_delta.len() != model.k {
            return Err(Error::Config(format!("w_delta has length {}, model has k={}", params.w_delta.len(), model.k)));
        }
        Ok(Self { model, params, pending: None })
    }

    /// Fit on healthy transitions and set `delta0` to the requested quantile
    /// of the in-sample discrepancies.
    pub fn calibrate(
        transitions: &[Transition],
        w_delta: Vec<f64>,
        kappa: f64,
        delta0_quantile: f64,
        lambda_env: f64,
        lambda_pred: f64,
    ) -> Result<Self> {
        let model = fit_safe_model(transitions)?;
        let mut params = DiscrepancyParams::new(w_delta, kappa, 0.0, lambda_env, lambda_pred)?;
        let deltas = transitions
            .iter()
            .map(|tr| discrepancy(&tr.x_next, &model.predict(&tr.x, tr.action, &tr.context)?, &params))
            .collect::<Result<Vec<_>>>()?;
        params.delta0 =
            quantile(&deltas, delta0_quantile).ok_or_else(|| Error::Numerical("could not calibrate delta0".into()))?;
        Self::new(model, params)
    }

    pub fn clear(&mut self) {
        self.pending = None;
    }

    /// Record the prediction for the transition about to happen.
    pub fn anticipate(&mut self, x: &[f64], action: f64, context: &[f64]) -> Result<()> {
        self.pending = Some(self.model.predict(x, action, context)?);
        Ok(())
    }

    /// Predictive signal for the observed `x_next`. With no outstanding
    /// prediction the discrepancy is taken as zero.
    pub fn observe(&mut self, x_next: &[f64]) -> Result<f64> {
        let delta = match self.pending.take() {
            Some(x_hat) => discrepancy(x_next, &x_hat, &self.params)?,
            None => 0.0,
        };
        Ok(pred_signal(delta, &self.params))
    }

    pub fn combine(&self, c_env: f64, c_pred: f64) -> Result<f64> {
        combine_cat(c_env, c_pred, &self.params)
    }
}
