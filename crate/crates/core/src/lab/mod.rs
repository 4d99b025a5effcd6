//! Desk-scale experiments: convergence sweeps, reconstruction and gradient
//! accuracy benchmarks, and toy training runs. Every experiment returns
//! plain rows that serialize to CSV with a fixed column order.

mod accuracy;
mod output;
mod reconstruct;
mod sweep;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use accuracy::{gradient_accuracy_bench, AccuracyRow, ORACLE_STEPS};
pub use output::{resolve_output, write_csv, OUT_DIR_ENV};
pub use reconstruct::{reconstruction_bench, roundtrip_error, ReconstructionRow};
pub use sweep::{convergence_sweep, SweepRow};
pub use train::{
    nfe_sweep, resume, train, Dataset, MetricsRow, Model, NfeRow, PlateauSchedule, TrainOutcome, TrainState, TrainTask,
};

use crate::error::{Error, Result};
use crate::solver::SolverConfig;
use crate::tensor::PrecisionPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sweep,
    Reconstruct,
    GradBench,
}

/// Grids and settings shared by the sweep-style experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub betas: Vec<f64>,
    /// Lipschitz constants of the generated cells.
    pub ks: Vec<f64>,
    /// Step counts N (or adjoint step counts m for the IFT rows).
    pub steps: Vec<usize>,
    pub policies: Vec<PrecisionPolicy>,
    pub seeds: Vec<u64>,
    pub tol: f64,
    /// Step budget for the convergence sweep.
    pub max_steps: usize,
    /// MLP cell sizes for the benchmarks.
    pub width: usize,
    pub hidden: usize,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            betas: vec![0.5, 0.8, 0.9],
            ks: vec![0.9],
            steps: vec![4, 16, 32, 64],
            policies: vec![PrecisionPolicy::DOUBLE],
            seeds: vec![0, 1, 2],
            tol: 1e-9,
            max_steps: 1000,
            width: 8,
            hidden: 16,
            out: None,
        };
        match kind {
            ExperimentKind::Sweep => Self {
                betas: grid(0.5, 1.3, 0.1),
                ks: grid(0.1, 0.9, 0.2),
                ..base
            },
            ExperimentKind::Reconstruct => Self {
                steps: vec![8, 16, 32],
                policies: vec![PrecisionPolicy::DOUBLE, PrecisionPolicy::MIXED, PrecisionPolicy::SINGLE],
                ..base
            },
            ExperimentKind::GradBench => Self {
                betas: vec![0.8],
                ks: vec![0.5, 0.9],
                steps: vec![1, 2, 4, 8, 16, 32],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::config(name, "grid must not be empty"))
            } else {
                Ok(())
            }
        };
        nonempty("beta", self.betas.len())?;
        nonempty("k", self.ks.len())?;
        nonempty("steps", self.steps.len())?;
        nonempty("policies", self.policies.len())?;
        nonempty("seeds", self.seeds.len())?;
        if self.kind != ExperimentKind::Sweep && self.steps.contains(&0) {
            return Err(Error::config("steps", "step counts must be at least 1"));
        }
        for &beta in &self.betas {
            let cfg = SolverConfig::default().with_beta(beta).with_tol(self.tol);
            match self.kind {
                ExperimentKind::Sweep => cfg.validate()?,
                _ => cfg.validate_reversible()?,
            }
        }
        for &k in &self.ks {
            let ok = match self.kind {
                ExperimentKind::Sweep => (0.0..1.0).contains(&k),
                _ => k > 0.0 && k < 1.0,
            };
            if !ok {
                return Err(Error::config(
                    "k",
                    format!("Lipschitz constant {k} outside the admissible range"),
                ));
            }
        }
        for p in &self.policies {
            p.validate()?;
        }
        if self.max_steps < 1 {
            return Err(Error::config("max_steps", "must be at least 1"));
        }
        if self.width == 0 || self.hidden == 0 {
            return Err(Error::config("width/hidden", "layer sizes must be positive"));
        }
        Ok(())
    }
}

/// `lo, lo + step, …` up to `hi` inclusive, rounded to 12 decimals so grid
/// values print cleanly.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
        .collect()
}

/// Parse `lo:hi:step` or a comma-separated list.
pub fn parse_grid(field: &str, s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::config(field, format!("`{t}` is not a number")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) || hi < lo {
                return Err(Error::config(field, format!("`{s}`: need lo <= hi and step > 0")));
            }
            Ok(grid(lo, hi, step))
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(Error::config(
            field,
            format!("`{s}`: expected lo:hi:step or a comma list"),
        )),
    }
}

/// Median of a non-empty slice; NaN sorts last and infinities are kept.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
