use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Penalty weights for predicted harm, realized damage and recall risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub lambda_cat: f64,
    pub lambda_d: f64,
    pub lambda_mem: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { lambda_cat: 0.5, lambda_d: 5.0, lambda_mem: 0.2 }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_cat", self.lambda_cat), ("lambda_d", self.lambda_d), ("lambda_mem", self.lambda_mem)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

pub fn shaped_reward(task: f64, cat: f64, delta_d: f64, y_hat: f64, p: &RewardParams) -> f64 {
    task - p.lambda_cat * cat - p.lambda_d * delta_d - p.lambda_mem * y_hat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let zero = RewardParams { lambda_cat: 0.0, lambda_d: 0.0, lambda_mem: 0.0 };
        assert_eq!(shaped_reward(0.7, 0.9, 0.3, 2.0, &zero), 0.7);
        let cat_only = RewardParams { lambda_cat: 0.5, ..zero };
        assert!((shaped_reward(1.0, 0.4, 0.0, 0.0, &cat_only) - 0.8).abs() < 1e-15);
        let damage_only = RewardParams { lambda_d: 5.0, ..zero };
        assert_eq!(shaped_reward(1.0, 0.9, 0.01, 3.0, &damage_only), 1.0 - 0.05);
    }

    #[test]
    fn monotone_in_penalties() {
        let p = RewardParams::default();
        let grid = [0.0, 0.1, 0.5, 1.0];
        for &a in &grid {
            for &b in &grid {
                assert!(shaped_reward(1.0, a + 0.1, b, b, &p) <= shaped_reward(1.0, a, b, b, &p));
                assert!(shaped_reward(1.0, b, a + 0.1, b, &p) <= shaped_reward(1.0, b, a, b, &p));
                assert!(shaped_reward(1.0, b, b, a + 0.1, &p) <= shaped_reward(1.0, b, b, a, &p));
            }
        }
    }
}
