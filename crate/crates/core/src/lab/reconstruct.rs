use rayon::prelude::*;
use serde::Serialize;

use super::{median, ExperimentKind, ExperimentSpec};
use crate::cell::{make_mlp_cell, CellSpec, EquilibriumFunction};
use crate::error::{Error, Result};
use crate::solver::{reversible_backward_step, reversible_forward_step, ReversibleState};
use crate::tensor::{PrecisionPolicy, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionRow {
    pub policy: String,
    pub beta: f64,
    pub n: usize,
    pub k: f64,
    /// Median over seeds of the largest coordinate error between the
    /// reconstructed and the stored trajectory.
    pub max_roundtrip_error: f64,
    pub seeds: usize,
}

/// Run `n` forward steps, keep the trajectory, then invert all `n` steps and
/// return the largest coordinate error against the stored states.
/// Reconstructions that overflow count as infinite error.
pub fn roundtrip_error<F: EquilibriumFunction>(
    f: &F,
    x: &Tensor,
    n: usize,
    beta: f64,
    policy: PrecisionPolicy,
) -> Result<f64> {
    let mut trajectory = vec![ReversibleState::initial(f.state_dim(), policy)];
    for _ in 0..n {
        let next = reversible_forward_step(f, x, trajectory.last().expect("non-empty"), beta, policy)?;
        trajectory.push(next);
    }
    let mut state = trajectory.last().expect("non-empty").clone();
    let mut worst = 0.0f64;
    for stored in trajectory.iter().rev().skip(1) {
        state = match reversible_backward_step(f, x, &state, beta, policy) {
            Ok(s) => s,
            Err(Error::Reconstruction { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        };
        worst = worst
            .max(state.y.max_abs_diff(&stored.y)?)
            .max(state.z.max_abs_diff(&stored.z)?);
    }
    Ok(worst)
}

/// Round-trip error over the policy × β × N × k grid, medians over seeds.
pub fn reconstruction_bench(spec: &ExperimentSpec) -> Result<Vec<ReconstructionRow>> {
    if spec.kind != ExperimentKind::Reconstruct {
        return Err(Error::config("kind", "reconstruction_bench needs a reconstruct spec"));
    }
    spec.validate()?;
    let mut jobs = Vec::new();
    for &policy in &spec.policies {
        for &beta in &spec.betas {
            for &n in &spec.steps {
                for &k in &spec.ks {
                    jobs.push((policy, beta, n, k));
                }
            }
        }
    }
    jobs.into_par_iter()
        .map(|(policy, beta, n, k)| {
            let errors = spec
                .seeds
                .iter()
                .map(|&seed| {
                    let cell = make_mlp_cell(spec.width, spec.hidden, k, seed)?;
                    let x = CellSpec::Mlp {
                        width: spec.width,
                        hidden: spec.hidden,
                        k,
                    }
                    .default_input(seed);
                    roundtrip_error(&cell, &x, n, beta, policy)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ReconstructionRow {
                policy: policy.label().to_string(),
                beta,
                n,
                k,
                max_roundtrip_error: median(&errors),
                seeds: errors.len(),
            })
        })
        .collect()
}
