//! Policy observations. Damage is deliberately not an input here.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{MAX_AGE, MIN_AGE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// `[x, activations, cat]`
    Base,
    /// `[x, activations, cat, y_hat, d_mean]`
    Epi,
    /// `[cat, age_norm]`
    Reduced,
    /// `[x]`, with no afferent signals at all.
    Features,
}

impl ObsMode {
    pub fn dim(self, k: usize, m: usize) -> usize {
        match self {
            ObsMode::Base => k + m + 1,
            ObsMode::Epi => k + m + 3,
            ObsMode::Reduced => 2,
            ObsMode::Features => k,
        }
    }

    pub fn includes_cat(self) -> bool {
        !matches!(self, ObsMode::Features)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObsMode::Base => "base",
            ObsMode::Epi => "epi",
            ObsMode::Reduced => "reduced",
            ObsMode::Features => "features",
        }
    }
}

impl fmt::Display for ObsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(ObsMode::Base),
            "epi" => Ok(ObsMode::Epi),
            "reduced" => Ok(ObsMode::Reduced),
            "features" => Ok(ObsMode::Features),
            _ => Err(Error::Config(format!("unknown observation mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub layout: ObsMode,
}

/// Signals available to the policy at one step.
#[derive(Debug, Clone, Copy)]
pub struct ObsInputs<'a> {
    pub x: &'a [f64],
    pub activations: &'a [f64],
    pub cat: f64,
    pub y_hat: f64,
    pub d_mean: f64,
    pub age: f64,
}

pub fn build_observation(inputs: &ObsInputs<'_>, k: usize, m: usize, mode: ObsMode) -> Result<Observation> {
    if inputs.x.len() != k || inputs.activations.len() != m {
        return Err(Error::Validation(format!(
            "observation expects k={k}, m={m}; got {} and {}",
            inputs.x.len(),
            inputs.activations.len()
        )));
    }
    let mut values = Vec::with_capacity(mode.dim(k, m));
    match mode {
        ObsMode::Reduced => {
            values.push(inputs.cat);
            values.push((inputs.age - MIN_AGE) / (MAX_AGE - MIN_AGE));
        }
        ObsMode::Features => values.extend_from_slice(inputs.x),
        ObsMode::Base | ObsMode::Epi => {
            values.extend_from_slice(inputs.x);
            values.extend_from_slice(inputs.activations);
            values.push(inputs.cat);
            if mode == ObsMode::Epi {
                values.push(inputs.y_hat);
                values.push(inputs.d_mean);
            }
        }
    }
    Ok(Observation { values, layout: mode })
}
