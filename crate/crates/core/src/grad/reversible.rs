use super::{check_cotangent, Adjoints, Engine, GradientReport};
use crate::cell::EquilibriumFunction;
use crate::error::{Error, Result};
use crate::solver::{SolveResult, SolveState, SolverConfig};
use crate::tensor::{NormKind, Tensor};

/// Backpropagate through a reversible solve without storing the forward
/// iterates: each step is reconstructed from its successor while the
/// adjoints are pulled back through it.
pub fn reversible_backprop<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    result: &SolveResult,
    loss_cotangent: &Tensor,
    config: &SolverConfig,
) -> Result<GradientReport> {
    check_cotangent(f, loss_cotangent)?;
    let adjoints = Adjoints::terminal(f, loss_cotangent, config.precision.accumulate);
    reversible_backprop_from(f, x, result, adjoints, config)
}

/// [`reversible_backprop`] from explicit terminal adjoints.
pub fn reversible_backprop_from<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    result: &SolveResult,
    adjoints: Adjoints,
    config: &SolverConfig,
) -> Result<GradientReport> {
    config.validate_reversible()?;
    let SolveState::Coupled(terminal) = &result.state else {
        return Err(Error::config("result", "reversible backprop needs a reversible solve"));
    };
    let policy = config.precision;
    let beta = config.beta;
    let keep = 1.0 - beta;
    let compute = policy.compute;
    let acc = policy.accumulate;

    let Adjoints {
        mut y_bar,
        mut z_bar,
        mut theta_bar,
    } = adjoints;
    let mut x_bar = Tensor::zeros_like(x);
    let mut y = terminal.y.clone();
    let mut z = terminal.z.clone();
    let mut max_tape = 0;

    for n in (0..terminal.step).rev() {
        // z-update: z_{n+1} = (1−β) z_n + β f(y_{n+1})
        let seed = z_bar.scale(beta).cast(compute);
        let at_y = f.vjp_at(&y, x, &seed, compute)?;
        let z_prev = z.sub(&at_y.value.cast(acc).scale(beta))?.div_scalar(keep);
        y_bar = y_bar.add(&at_y.z)?;

        // y-update: y_{n+1} = (1−β) y_n + β f(z_n)
        let seed = y_bar.scale(beta).cast(compute);
        let at_z = f.vjp_at(&z_prev, x, &seed, compute)?;
        let y_prev = y.sub(&at_z.value.cast(acc).scale(beta))?.div_scalar(keep);
        if !z_prev.is_finite() || !y_prev.is_finite() {
            return Err(Error::Reconstruction { step: n });
        }

        let z_bar_prev = z_bar.scale(keep).add(&at_z.z)?;
        y_bar = y_bar.scale(keep);
        z_bar = z_bar_prev;
        for ((acc_t, a), b) in theta_bar.iter_mut().zip(&at_y.theta).zip(&at_z.theta) {
            *acc_t = acc_t.add(a)?.add(b)?;
        }
        x_bar = x_bar.add(&at_y.x)?.add(&at_z.x)?;

        max_tape = max_tape.max(at_y.tape_len.max(at_z.tape_len));
        y = y_prev;
        z = z_prev;
    }

    let p = theta_bar.len();
    // y, z, ȳ, z̄, x̄, θ̄, plus one retained VJP result (value, z̄, x̄, θ̄)
    // while the next local tape is alive.
    let peak = 5 + p + (3 + p) + max_tape;
    let reconstruction_error = (terminal.step > 0).then(|| y.norm(NormKind::Max).max(z.norm(NormKind::Max)));
    Ok(GradientReport {
        theta_grad: theta_bar,
        x_grad: Some(x_bar),
        engine: Engine::Reversible,
        nfe_forward: result.nfe,
        nfe_backward: 2 * terminal.step,
        peak_stored_tensors: peak,
        reconstruction_error,
    })
}
