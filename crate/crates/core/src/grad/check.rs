use super::{solve_and_differentiate, Engine};
use crate::cell::EquilibriumFunction;
use crate::error::{Error, Result};
use crate::finite_diff::finite_diff_grad;
use crate::solver::{reversible_forward, SolverConfig, StopRule};
use crate::tensor::{Precision, PrecisionPolicy, Tensor};

/// Denominator floor for coordinatewise relative errors, so coordinates
/// that are zero in the reference are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Largest coordinatewise `|a − b| / max(|b|, REL_ERROR_FLOOR)`, with `b`
/// the reference.
pub fn relative_error(a: &Tensor, reference: &Tensor) -> Result<f64> {
    if a.shape() != reference.shape() {
        return Err(Error::ShapeMismatch {
            op: "relative_error",
            lhs: a.shape().to_vec(),
            rhs: reference.shape().to_vec(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(reference.data())
        .map(|(x, r)| (x - r).abs() / r.abs().max(REL_ERROR_FLOOR))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiscrepancy {
    /// Parameter name, or `x` for the input.
    pub name: String,
    pub max_abs: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub engine: Engine,
    /// Solver steps used by both the engine and the finite-difference map.
    pub steps: usize,
    pub entries: Vec<ParamDiscrepancy>,
}

impl GradCheckReport {
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.max_abs).fold(0.0, f64::max)
    }

    pub fn max_rel(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel).fold(0.0, f64::max)
    }
}

/// Compare an engine's gradient of `L = c · z_N` against central finite
/// differences of the full solve-then-loss map, for every parameter and for
/// `x`. The step count is pinned to the one realised by the unperturbed
/// solve so both sides differentiate the same map. Runs in double
/// precision.
pub fn grad_check<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    config: &SolverConfig,
    engine: Engine,
    loss_weights: &Tensor,
    fd_eps: f64,
) -> Result<GradCheckReport> {
    let base = SolverConfig {
        precision: PrecisionPolicy::DOUBLE,
        ..*config
    };
    let steps = reversible_forward(f, x, &base)?.steps_taken;
    let pinned = base.with_max_steps(steps).with_stop_rule(StopRule::FixedSteps);
    let report = solve_and_differentiate(engine, f, x, &pinned, loss_weights)?;

    let loss = |cell: &F, input: &Tensor| -> Result<f64> {
        let z = reversible_forward(cell, input, &pinned)?.state.z().clone();
        Ok(z.data().iter().zip(loss_weights.data()).map(|(a, b)| a * b).sum())
    };

    let mut entries = Vec::new();
    for (i, name) in f.param_names().iter().enumerate() {
        let fd = finite_diff_grad(
            |p| {
                let mut params = f.params().to_vec();
                params[i] = p.clone();
                loss(&f.with_params(params)?, x)
            },
            &f.params()[i],
            fd_eps,
        )?;
        entries.push(discrepancy(name, &report.theta_grad[i], &fd)?);
    }
    let fd_x = finite_diff_grad(|p| loss(f, p), &x.cast(Precision::Double), fd_eps)?;
    if let Some(gx) = &report.x_grad {
        entries.push(discrepancy("x", gx, &fd_x)?);
    }
    Ok(GradCheckReport { engine, steps, entries })
}

fn discrepancy(name: &str, engine: &Tensor, fd: &Tensor) -> Result<ParamDiscrepancy> {
    Ok(ParamDiscrepancy {
        name: name.to_string(),
        max_abs: engine.max_abs_diff(fd)?,
        max_rel: relative_error(engine, fd)?,
    })
}
