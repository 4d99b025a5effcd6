//! Fixed-point solvers: naive and relaxed iteration, and the coupled
//! reversible scheme with its exact algebraic inverse.

mod config;
mod rates;
mod reversible;

pub use config::{SolverConfig, StopRule, BETA_FLOOR, DIVERGENCE_THRESHOLD};
pub use rates::{beta_upper_bound, coupled_rate_bound, diagonal_coupled_rate, rate_constant};
pub(crate) use reversible::step_on;
pub use reversible::{reversible_backward_step, reversible_forward, reversible_forward_step, ReversibleState};

use crate::cell::EquilibriumFunction;
use crate::error::{Error, Result};
use crate::tensor::{NormKind, Tensor};

/// Final iterate of a solve.
#[derive(Debug, Clone)]
pub enum SolveState {
    Single(Tensor),
    Coupled(ReversibleState),
}

impl SolveState {
    /// The equilibrium estimate: the iterate for single-sequence solvers,
    /// `z` for the coupled scheme.
    pub fn z(&self) -> &Tensor {
        match self {
            SolveState::Single(z) => z,
            SolveState::Coupled(s) => &s.z,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub state: SolveState,
    /// Max-norm residual of the last step.
    pub residual: f64,
    pub steps_taken: usize,
    /// Number of evaluations of `f`.
    pub nfe: usize,
    pub converged: bool,
}

/// Plain iteration `z ← f(z, x)` from `z₀ = 0`. `config.beta` is ignored.
pub fn naive_iterate<F: EquilibriumFunction>(f: &F, x: &Tensor, config: &SolverConfig) -> Result<SolveResult> {
    iterate(f, x, config, None)
}

/// Relaxed iteration `z ← (1 − β) z + β f(z, x)` from `z₀ = 0`.
pub fn relaxed_iterate<F: EquilibriumFunction>(f: &F, x: &Tensor, config: &SolverConfig) -> Result<SolveResult> {
    iterate(f, x, config, Some(config.beta))
}

fn iterate<F: EquilibriumFunction>(f: &F, x: &Tensor, config: &SolverConfig, beta: Option<f64>) -> Result<SolveResult> {
    config.validate()?;
    let policy = config.precision;
    let mut z = Tensor::zeros(&[f.state_dim()], policy.accumulate);
    let mut residual = f64::INFINITY;
    let mut steps = 0;
    while steps < config.max_steps {
        let fz = f.eval_at(&z, x, policy.compute)?.cast(policy.accumulate);
        let next = match beta {
            None => fz,
            Some(b) => z.scale(1.0 - b).add(&fz.scale(b))?,
        };
        steps += 1;
        residual = next.sub(&z)?.norm(NormKind::Max);
        check_divergence(steps, residual, &[&next], || vec![z.clone()])?;
        z = next;
        if config.stop_rule == StopRule::Residual && residual < config.tol {
            break;
        }
    }
    Ok(SolveResult {
        state: SolveState::Single(z),
        residual,
        steps_taken: steps,
        nfe: steps,
        converged: residual < config.tol,
    })
}

pub(crate) fn check_divergence(
    step: usize,
    residual: f64,
    fresh: &[&Tensor],
    last_finite: impl FnOnce() -> Vec<Tensor>,
) -> Result<()> {
    let reason = if fresh.iter().any(|t| !t.is_finite()) {
        "non-finite iterate".to_string()
    } else if residual > DIVERGENCE_THRESHOLD {
        format!("residual {residual:e} exceeds {DIVERGENCE_THRESHOLD:e}")
    } else {
        return Ok(());
    };
    Err(Error::Divergence {
        step,
        reason,
        last_finite: last_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::LinearCell;

    #[test]
    fn naive_converges_on_scalar_contraction() {
        let cell = LinearCell::scalar(0.5, 1.0).unwrap();
        let cfg = SolverConfig::default().with_tol(1e-12).with_max_steps(200);
        let out = naive_iterate(&cell, &Tensor::scalar(0.0), &cfg).unwrap();
        assert!(out.converged);
        assert!((out.state.z().data()[0] - 2.0).abs() < 1e-11);
        assert_eq!(out.nfe, out.steps_taken);
    }

    #[test]
    fn relaxed_with_unit_beta_is_naive() {
        let cell = LinearCell::scalar(-0.7, 0.3).unwrap();
        let cfg = SolverConfig::fixed_steps(25).with_beta(1.0);
        let a = naive_iterate(&cell, &Tensor::scalar(0.2), &cfg).unwrap();
        let b = relaxed_iterate(&cell, &Tensor::scalar(0.2), &cfg).unwrap();
        assert_eq!(a.state.z(), b.state.z());
    }

    #[test]
    fn expanding_map_diverges() {
        let cell = LinearCell::scalar(3.0, 1.0).unwrap();
        let cfg = SolverConfig::fixed_steps(100);
        match naive_iterate(&cell, &Tensor::scalar(0.0), &cfg) {
            Err(Error::Divergence { last_finite, step, .. }) => {
                assert!(last_finite[0].is_finite());
                assert!(step > 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
