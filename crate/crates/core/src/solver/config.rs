use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::PrecisionPolicy;

/// Smallest admissible `|1 − β|` for the reversible engine. The backward step
/// divides by `1 − β`.
pub const BETA_FLOOR: f64 = 1e-3;

/// Residuals above this abort a solve as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Always take `max_steps` steps.
    FixedSteps,
    /// Stop as soon as the residual drops below `tol`.
    Residual,
}

impl std::str::FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_steps" | "fixed" => Ok(StopRule::FixedSteps),
            "residual" => Ok(StopRule::Residual),
            other => Err(Error::config(
                "stop_rule",
                format!("expected `fixed_steps` or `residual`, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Relaxation parameter β.
    pub beta: f64,
    /// Residual tolerance ε.
    pub tol: f64,
    /// Step budget N.
    pub max_steps: usize,
    pub precision: PrecisionPolicy,
    pub stop_rule: StopRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            tol: 1e-6,
            max_steps: 8,
            precision: PrecisionPolicy::DOUBLE,
            stop_rule: StopRule::Residual,
        }
    }
}

impl SolverConfig {
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    pub fn with_precision(mut self, precision: PrecisionPolicy) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_stop_rule(mut self, rule: StopRule) -> Self {
        self.stop_rule = rule;
        self
    }

    /// Exactly `n` steps, no early stopping.
    pub fn fixed_steps(n: usize) -> Self {
        Self::default().with_max_steps(n).with_stop_rule(StopRule::FixedSteps)
    }

    /// Constraints shared by every engine.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 2.0) {
            return Err(Error::config("beta", format!("must lie in (0, 2), got {}", self.beta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", format!("must be positive, got {}", self.tol)));
        }
        if self.max_steps < 1 {
            return Err(Error::config("max_steps", "must be at least 1"));
        }
        self.precision.validate()
    }

    /// [`validate`](Self::validate) plus the `|1 − β|` floor that keeps the
    /// reversible backward step well defined.
    pub fn validate_reversible(&self) -> Result<()> {
        self.validate()?;
        check_beta_floor(self.beta)
    }
}

pub(crate) fn check_beta_floor(beta: f64) -> Result<()> {
    if (1.0 - beta).abs() < BETA_FLOOR {
        return Err(Error::config(
            "beta",
            format!(
                "|1 - beta| must be at least {BETA_FLOOR} for the reversible solver \
                 (its backward step divides by 1 - beta), got beta = {beta}"
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SolverConfig::default().validate_reversible().unwrap();
    }

    #[test]
    fn beta_one_is_rejected_only_for_reversible() {
        let cfg = SolverConfig::default().with_beta(1.0);
        cfg.validate().unwrap();
        let err = cfg.validate_reversible().unwrap_err().to_string();
        assert!(err.contains("reversible"), "{err}");
        assert!(SolverConfig::default().with_beta(1.0005).validate_reversible().is_err());
        assert!(SolverConfig::default().with_beta(1.002).validate_reversible().is_ok());
    }

    #[test]
    fn range_checks() {
        assert!(SolverConfig::default().with_beta(0.0).validate().is_err());
        assert!(SolverConfig::default().with_beta(2.0).validate().is_err());
        assert!(SolverConfig::default().with_tol(0.0).validate().is_err());
        assert!(SolverConfig::default().with_max_steps(0).validate().is_err());
    }
}
