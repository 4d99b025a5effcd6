use super::config::check_beta_floor;
use super::{check_divergence, SolveResult, SolveState, SolverConfig, StopRule};
use crate::autodiff::{Eager, Graph};
use crate::cell::EquilibriumFunction;
use crate::error::{Error, Result};
use crate::tensor::{NormKind, PrecisionPolicy, Tensor};

/// The coupled pair `(y, z)` after `step` reversible steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversibleState {
    pub y: Tensor,
    pub z: Tensor,
    pub step: usize,
}

impl ReversibleState {
    /// `y₀ = z₀ = 0` at the accumulation precision.
    pub fn initial(dim: usize, policy: PrecisionPolicy) -> Self {
        let zero = Tensor::zeros(&[dim], policy.accumulate);
        Self {
            y: zero.clone(),
            z: zero,
            step: 0,
        }
    }
}

/// `f(v, x)` evaluated at the compute precision and widened back to the
/// accumulation precision. `x` and `params` must already be at the compute
/// precision.
pub(crate) fn apply_at<G: Graph, F: EquilibriumFunction>(
    g: &mut G,
    f: &F,
    v: &G::Value,
    x: &G::Value,
    params: &[G::Value],
    policy: PrecisionPolicy,
) -> Result<G::Value> {
    let vc = g.cast(v, policy.compute)?;
    let out = f.apply(g, &vc, x, params)?;
    g.cast(&out, policy.accumulate)
}

/// One forward step on any graph:
/// `y' = (1 − β) y + β f(z)`, then `z' = (1 − β) z + β f(y')`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_on<G: Graph, F: EquilibriumFunction>(
    g: &mut G,
    f: &F,
    y: &G::Value,
    z: &G::Value,
    x: &G::Value,
    params: &[G::Value],
    beta: f64,
    policy: PrecisionPolicy,
) -> Result<(G::Value, G::Value)> {
    let fz = apply_at(g, f, z, x, params, policy)?;
    let a = g.scale(y, 1.0 - beta)?;
    let b = g.scale(&fz, beta)?;
    let y1 = g.add(&a, &b)?;
    let fy = apply_at(g, f, &y1, x, params, policy)?;
    let a = g.scale(z, 1.0 - beta)?;
    let b = g.scale(&fy, beta)?;
    let z1 = g.add(&a, &b)?;
    Ok((y1, z1))
}

fn compute_params<F: EquilibriumFunction>(f: &F, policy: PrecisionPolicy) -> Vec<Tensor> {
    f.params().iter().map(|p| p.cast(policy.compute)).collect()
}

/// One forward step without validating β.
pub fn reversible_forward_step<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    state: &ReversibleState,
    beta: f64,
    policy: PrecisionPolicy,
) -> Result<ReversibleState> {
    let params = compute_params(f, policy);
    let xc = x.cast(policy.compute);
    let (y, z) = step_on(&mut Eager, f, &state.y, &state.z, &xc, &params, beta, policy)?;
    Ok(ReversibleState {
        y,
        z,
        step: state.step + 1,
    })
}

/// Invert one forward step:
/// `z = (z' − β f(y')) / (1 − β)`, then `y = (y' − β f(z)) / (1 − β)`.
pub fn reversible_backward_step<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    next: &ReversibleState,
    beta: f64,
    policy: PrecisionPolicy,
) -> Result<ReversibleState> {
    check_beta_floor(beta)?;
    let params = compute_params(f, policy);
    let xc = x.cast(policy.compute);
    let fy = apply_at(&mut Eager, f, &next.y, &xc, &params, policy)?;
    let z = next.z.sub(&fy.scale(beta))?.div_scalar(1.0 - beta);
    let fz = apply_at(&mut Eager, f, &z, &xc, &params, policy)?;
    let y = next.y.sub(&fz.scale(beta))?.div_scalar(1.0 - beta);
    let step = next.step.saturating_sub(1);
    if !y.is_finite() || !z.is_finite() {
        return Err(Error::Reconstruction { step });
    }
    Ok(ReversibleState { y, z, step })
}

/// Run the coupled scheme from `y₀ = z₀ = 0`. Each step costs two
/// evaluations of `f`; the residual is the max-norm change over both
/// sequences.
pub fn reversible_forward<F: EquilibriumFunction>(f: &F, x: &Tensor, config: &SolverConfig) -> Result<SolveResult> {
    config.validate_reversible()?;
    let policy = config.precision;
    let params = compute_params(f, policy);
    let xc = x.cast(policy.compute);
    let mut state = ReversibleState::initial(f.state_dim(), policy);
    let mut residual = f64::INFINITY;
    while state.step < config.max_steps {
        let (y, z) = step_on(&mut Eager, f, &state.y, &state.z, &xc, &params, config.beta, policy)?;
        let step = state.step + 1;
        residual = y
            .sub(&state.y)?
            .norm(NormKind::Max)
            .max(z.sub(&state.z)?.norm(NormKind::Max));
        check_divergence(step, residual, &[&y, &z], || vec![state.y.clone(), state.z.clone()])?;
        state = ReversibleState { y, z, step };
        if config.stop_rule == StopRule::Residual && residual < config.tol {
            break;
        }
    }
    let steps_taken = state.step;
    Ok(SolveResult {
        state: SolveState::Coupled(state),
        residual,
        steps_taken,
        nfe: 2 * steps_taken,
        converged: residual < config.tol,
    })
}
