use super::{check_cotangent, Engine, GradientReport};
use crate::cell::EquilibriumFunction;
use crate::error::Result;
use crate::solver::{check_divergence, SolverConfig, StopRule};
use crate::tensor::{NormKind, Tensor};

/// Implicit-function gradient at an approximate fixed point `z*`.
///
/// Solves `g = (∂f/∂z)ᵀ g + a_z` by damped iteration from `g₀ = a_z`, using
/// β, tolerance, step budget and stop rule from `adjoint_config`, then
/// projects `g` onto θ and `x`.
pub fn ift_gradient<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    z_star: &Tensor,
    loss_cotangent: &Tensor,
    adjoint_config: &SolverConfig,
) -> Result<GradientReport> {
    adjoint_config.validate()?;
    check_cotangent(f, loss_cotangent)?;
    let beta = adjoint_config.beta;
    let a_z = loss_cotangent.cast(z_star.precision());
    let mut g = a_z.clone();
    let mut vjps = 0;
    let mut max_tape = 0;
    for step in 1..=adjoint_config.max_steps {
        let v = f.vjp(z_star, x, &g)?;
        vjps += 1;
        max_tape = max_tape.max(v.tape_len);
        let target = v.z.add(&a_z)?;
        let next = g.scale(1.0 - beta).add(&target.scale(beta))?;
        let residual = next.sub(&g)?.norm(NormKind::Max);
        check_divergence(step, residual, &[&next], || vec![g.clone()])?;
        g = next;
        if adjoint_config.stop_rule == StopRule::Residual && residual < adjoint_config.tol {
            break;
        }
    }
    let mut report = project(f, x, z_star, &g, Engine::Ift)?;
    report.nfe_backward += vjps;
    // z*, a_z, g, x̄, θ̄ and the local tape
    report.peak_stored_tensors = report.peak_stored_tensors.max(3 + max_tape);
    Ok(report)
}

/// Jacobian-free baseline: project the loss cotangent directly.
pub fn jfb_gradient<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    z_star: &Tensor,
    loss_cotangent: &Tensor,
) -> Result<GradientReport> {
    check_cotangent(f, loss_cotangent)?;
    project(f, x, z_star, &loss_cotangent.cast(z_star.precision()), Engine::Jfb)
}

fn project<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    z_star: &Tensor,
    g: &Tensor,
    engine: Engine,
) -> Result<GradientReport> {
    let v = f.vjp(z_star, x, g)?;
    let p = v.theta.len();
    Ok(GradientReport {
        peak_stored_tensors: 3 + p + v.tape_len,
        theta_grad: v.theta,
        x_grad: Some(v.x),
        engine,
        nfe_forward: 0,
        nfe_backward: 1,
        reconstruction_error: None,
    })
}
