use rayon::prelude::*;
use serde::Serialize;

use super::{ExperimentKind, ExperimentSpec};
use crate::cell::{EquilibriumFunction, LinearCell};
use crate::error::{Error, Result};
use crate::solver::{beta_upper_bound, rate_constant, reversible_forward_step, ReversibleState, DIVERGENCE_THRESHOLD};
use crate::tensor::{NormKind, PrecisionPolicy, Tensor};

/// Errors below this are treated as roundoff and excluded from the
/// measured rate.
const RATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: f64,
    pub beta: f64,
    pub beta_bound: f64,
    pub l_predicted: f64,
    /// Geometric mean of successive error ratios from step 2 on; empty when
    /// fewer than two steps had a measurable error.
    pub l_measured: Option<f64>,
    pub steps_to_tol: Option<usize>,
    pub converged: bool,
    pub final_error: f64,
}

/// Run the coupled scheme on `f(z) = k z + 1` for every (k, β) pair and
/// compare the observed contraction with `|1 − β| + β k`. β values beyond
/// the guaranteed range are run too; their rows just record what happened.
pub fn convergence_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    if spec.kind != ExperimentKind::Sweep {
        return Err(Error::config("kind", "convergence_sweep needs a sweep spec"));
    }
    spec.validate()?;
    let jobs: Vec<(f64, f64)> = spec
        .ks
        .iter()
        .flat_map(|&k| spec.betas.iter().map(move |&b| (k, b)))
        .collect();
    jobs.into_par_iter()
        .map(|(k, beta)| sweep_point(k, beta, spec.tol, spec.max_steps))
        .collect()
}

fn sweep_point(k: f64, beta: f64, tol: f64, max_steps: usize) -> Result<SweepRow> {
    let cell = LinearCell::scalar(k, 1.0)?;
    let x = Tensor::scalar(0.0);
    let q = 1.0 / (1.0 - k);
    let err = |s: &ReversibleState| (s.y.data()[0] - q).abs().max((s.z.data()[0] - q).abs());

    let mut state = ReversibleState::initial(cell.state_dim(), PrecisionPolicy::DOUBLE);
    let mut errors = vec![err(&state)];
    let mut steps_to_tol = None;
    for n in 1..=max_steps {
        let next = reversible_forward_step(&cell, &x, &state, beta, PrecisionPolicy::DOUBLE)?;
        let residual = next
            .y
            .sub(&state.y)?
            .norm(NormKind::Max)
            .max(next.z.sub(&state.z)?.norm(NormKind::Max));
        state = next;
        errors.push(err(&state));
        if !residual.is_finite() || residual > DIVERGENCE_THRESHOLD {
            break;
        }
        if residual < tol {
            steps_to_tol = Some(n);
            break;
        }
    }

    // ratios e_n / e_{n-1} for n >= 2 while e_{n-1} is above roundoff
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for n in 2..errors.len() {
        let (prev, cur) = (errors[n - 1], errors[n]);
        if prev <= RATE_FLOOR || !cur.is_finite() {
            break;
        }
        if cur == 0.0 {
            break;
        }
        log_sum += (cur / prev).ln();
        count += 1;
    }
    let exact_hit = errors.iter().skip(1).any(|&e| e == 0.0);
    let l_measured = if count > 0 {
        Some((log_sum / count as f64).exp())
    } else if exact_hit {
        Some(0.0)
    } else {
        None
    };
    Ok(SweepRow {
        k,
        beta,
        beta_bound: beta_upper_bound(k)?,
        l_predicted: rate_constant(beta, k)?,
        l_measured,
        steps_to_tol,
        converged: steps_to_tol.is_some(),
        final_error: *errors.last().expect("initial error recorded"),
    })
}
