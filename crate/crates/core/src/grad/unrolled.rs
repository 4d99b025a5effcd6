use super::{check_cotangent, Engine, GradientReport};
use crate::autodiff::{Graph, Tape};
use crate::cell::EquilibriumFunction;
use crate::error::{Error, Result};
use crate::solver::{check_divergence, step_on, SolverConfig, StopRule};
use crate::tensor::{NormKind, Tensor};

/// Record the whole reversible forward pass on one tape and differentiate
/// it with reverse-mode AD. Exact for the finite graph; memory grows with
/// the number of steps.
pub fn unrolled_gradient<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    config: &SolverConfig,
    loss_cotangent: &Tensor,
) -> Result<GradientReport> {
    config.validate_reversible()?;
    check_cotangent(f, loss_cotangent)?;
    let policy = config.precision;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let pv: Vec<_> = f.params().iter().map(|p| tape.leaf(p.clone())).collect();
    let xc = tape.cast(&xv, policy.compute)?;
    let pc = pv
        .iter()
        .map(|p| tape.cast(p, policy.compute))
        .collect::<Result<Vec<_>>>()?;
    let zero = Tensor::zeros(&[f.state_dim()], policy.accumulate);
    let mut y = tape.leaf(zero.clone());
    let mut z = tape.leaf(zero);

    let mut steps = 0;
    while steps < config.max_steps {
        let (y1, z1) = step_on(&mut tape, f, &y, &z, &xc, &pc, config.beta, policy)?;
        steps += 1;
        let (y1t, z1t) = (tape.value(y1)?, tape.value(z1)?);
        let residual = y1t
            .sub(tape.value(y)?)?
            .norm(NormKind::Max)
            .max(z1t.sub(tape.value(z)?)?.norm(NormKind::Max));
        check_divergence(steps, residual, &[y1t, z1t], || {
            [y, z].iter().filter_map(|v| tape.value(*v).ok().cloned()).collect()
        })?;
        y = y1;
        z = z1;
        if config.stop_rule == StopRule::Residual && residual < config.tol {
            break;
        }
    }

    let peak = tape.len();
    let mut grads = tape.vjp(z, loss_cotangent)?;
    let theta_grad = pv
        .iter()
        .map(|p| grads.take(*p).ok_or(Error::UnknownVar(p.index())))
        .collect::<Result<Vec<_>>>()?;
    let x_grad = grads.take(xv).ok_or(Error::UnknownVar(xv.index()))?;
    Ok(GradientReport {
        theta_grad,
        x_grad: Some(x_grad),
        engine: Engine::Unrolled,
        nfe_forward: 2 * steps,
        nfe_backward: 0,
        peak_stored_tensors: peak,
        reconstruction_error: None,
    })
}
