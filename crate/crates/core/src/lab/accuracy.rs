use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{median, ExperimentKind, ExperimentSpec};
use crate::cell::{make_mlp_cell, CellSpec, MlpCell};
use crate::error::{Error, Result};
use crate::grad::{
    ift_gradient, jfb_gradient, relative_error, reversible_backprop, unrolled_gradient, Engine, GradientReport,
};
use crate::solver::{reversible_forward, SolverConfig};
use crate::tensor::{flatten, Tensor};

/// Step count of the unrolled reference gradient.
pub const ORACLE_STEPS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub k: f64,
    pub beta: f64,
    pub engine: String,
    /// Solver steps N for the reversible engine, adjoint steps m for IFT,
    /// 0 for the Jacobian-free baseline.
    pub steps: usize,
    pub oracle_steps: usize,
    /// Median over seeds of `‖g − g_oracle‖₂ / ‖g_oracle‖₂` over all θ.
    pub rel_error_vs_oracle: f64,
    /// Reversible rows only: median of the largest coordinatewise relative
    /// error against the unrolled gradient at the same N.
    pub coord_rel_error_vs_unrolled_same_n: Option<f64>,
    pub nfe_forward: usize,
    pub nfe_backward: usize,
}

struct Case {
    cell: MlpCell,
    x: Tensor,
    cot: Tensor,
    oracle: Vec<f64>,
    z_star: Tensor,
}

fn normwise(a: &[Tensor], oracle: &[f64]) -> f64 {
    let a = flatten(a);
    let num: f64 = a.iter().zip(oracle).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = oracle.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Compare the reversible engine over N, IFT over adjoint steps m and the
/// Jacobian-free baseline against an unrolled gradient at
/// [`ORACLE_STEPS`] steps.
pub fn gradient_accuracy_bench(spec: &ExperimentSpec) -> Result<Vec<AccuracyRow>> {
    if spec.kind != ExperimentKind::GradBench {
        return Err(Error::config("kind", "gradient_accuracy_bench needs a grad-bench spec"));
    }
    spec.validate()?;
    let mut jobs = Vec::new();
    for &k in &spec.ks {
        for &beta in &spec.betas {
            jobs.push((k, beta));
        }
    }
    let nested = jobs
        .into_par_iter()
        .map(|(k, beta)| bench_point(spec, k, beta))
        .collect::<Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn bench_point(spec: &ExperimentSpec, k: f64, beta: f64) -> Result<Vec<AccuracyRow>> {
    let oracle_cfg = SolverConfig::fixed_steps(ORACLE_STEPS).with_beta(beta);
    let cases = spec
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
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc07a_6e47);
            let cot = Tensor::vector((0..spec.width).map(|_| StandardNormal.sample(&mut rng)).collect());
            let oracle = flatten(&unrolled_gradient(&cell, &x, &oracle_cfg, &cot)?.theta_grad);
            let z_star = reversible_forward(&cell, &x, &oracle_cfg)?.state.z().clone();
            Ok(Case {
                cell,
                x,
                cot,
                oracle,
                z_star,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let row = |engine: Engine, steps: usize, reports: &[GradientReport], same_n: Option<Vec<f64>>| AccuracyRow {
        k,
        beta,
        engine: engine.to_string(),
        steps,
        oracle_steps: ORACLE_STEPS,
        rel_error_vs_oracle: median(
            &reports
                .iter()
                .zip(&cases)
                .map(|(r, c)| normwise(&r.theta_grad, &c.oracle))
                .collect::<Vec<_>>(),
        ),
        coord_rel_error_vs_unrolled_same_n: same_n.map(|v| median(&v)),
        nfe_forward: reports[0].nfe_forward,
        nfe_backward: reports[0].nfe_backward,
    };

    let mut rows = Vec::new();
    for &n in &spec.steps {
        let cfg = SolverConfig::fixed_steps(n).with_beta(beta);
        let mut reports = Vec::new();
        let mut same_n = Vec::new();
        for c in &cases {
            let fwd = reversible_forward(&c.cell, &c.x, &cfg)?;
            let rev = reversible_backprop(&c.cell, &c.x, &fwd, &c.cot, &cfg)?;
            let unr = unrolled_gradient(&c.cell, &c.x, &cfg, &c.cot)?;
            let mut worst = 0.0f64;
            for (a, b) in rev.theta_grad.iter().zip(&unr.theta_grad) {
                worst = worst.max(relative_error(a, b)?);
            }
            same_n.push(worst);
            reports.push(rev);
        }
        rows.push(row(Engine::Reversible, n, &reports, Some(same_n)));
    }
    for &m in &spec.steps {
        let adj = SolverConfig::fixed_steps(m).with_beta(beta);
        let reports = cases
            .iter()
            .map(|c| ift_gradient(&c.cell, &c.x, &c.z_star, &c.cot, &adj))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row(Engine::Ift, m, &reports, None));
    }
    let reports = cases
        .iter()
        .map(|c| jfb_gradient(&c.cell, &c.x, &c.z_star, &c.cot))
        .collect::<Result<Vec<_>>>()?;
    rows.push(row(Engine::Jfb, 0, &reports, None));
    Ok(rows)
}
