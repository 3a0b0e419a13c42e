//! Declarative experiment configuration, read from TOML. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use parint_core::instances::SignPattern;
use parint_core::multilevel::{min_budget, Algorithm};
use parint_core::problem::Exponent;
use parint_core::ProblemSpec;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Test function family. Random families are redrawn for every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceConfig {
    Smooth {},
    Zero {},
    Polynomial {},
    Bump {
        /// Cell level of the bumps. By default the level at which the
        /// non-adaptive lower bound is attained for the budget at hand.
        #[serde(default)]
        level: Option<u32>,
        #[serde(default = "default_pattern")]
        pattern: SignPattern,
        #[serde(default = "one")]
        amplitude: f64,
        /// Shape in `t`. By default the one matching the branch of the
        /// non-adaptive rate.
        #[serde(default)]
        profile: Option<BumpProfile>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpProfile {
    /// Tensor bumps on the cells of `D1 × D2` with independent signs.
    Cell,
    /// Bumps in the parameter times a smooth factor in `t`.
    Parameter,
}

fn default_pattern() -> SignPattern {
    SignPattern::HeavyRows { rows: 1 }
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn default_replications() -> usize {
    20
}

fn default_algorithm() -> Algorithm {
    Algorithm::A4
}

fn default_instance() -> InstanceConfig {
    InstanceConfig::Smooth {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: ProblemSpec,
    /// Ignored by the gap experiment, which always runs both randomized
    /// algorithms.
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_instance")]
    pub instance: InstanceConfig,
    pub n_grid: Vec<u64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Error grid points per axis; at least four per finest output cell
    /// are always used.
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Moment order `w` of the error, `1 <= w <= p`.
    #[serde(default = "two")]
    pub moment: f64,
    /// Constant in the repetition count of the adaptive estimator.
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks the constraints that serde cannot express. `randomized`
    /// lists the algorithms whose minimal budget applies.
    pub fn validate(&self, randomized: &[Algorithm]) -> Result<(), HarnessError> {
        let s = &self.spec;
        ProblemSpec::new(s.r, s.p, s.q, s.d1, s.d2).map_err(|e| HarnessError::Config(e.to_string()))?;
        s.require_solvable().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.n_grid.is_empty() {
            return Err(HarnessError::Config("n_grid must not be empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config("n_grid must be strictly increasing".into()));
        }
        if randomized.iter().any(|a| *a != Algorithm::Det) {
            let n0 = min_budget(s);
            if self.n_grid[0] < n0 {
                return Err(HarnessError::Config(format!(
                    "budget {} below minimal n(0) = {n0}",
                    self.n_grid[0]
                )));
            }
        }
        if self.replications < 2 {
            return Err(HarnessError::Config("replications must be at least 2".into()));
        }
        let w_ok = self.moment >= 1.0
            && match s.p {
                Exponent::Infinite => self.moment.is_finite(),
                p => self.moment <= p.to_f64(),
            };
        if !w_ok {
            return Err(HarnessError::Config(format!("moment must lie in [1, p], got {}", self.moment)));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(HarnessError::Config("c1 must be positive".into()));
        }
        if let InstanceConfig::Bump { level, amplitude, .. } = &self.instance {
            if *level == Some(0) {
                return Err(HarnessError::Config("bump level must be at least 1".into()));
            }
            if !(amplitude.is_finite() && *amplitude > 0.0) {
                return Err(HarnessError::Config("bump amplitude must be positive".into()));
            }
        }
        Ok(())
    }
}
