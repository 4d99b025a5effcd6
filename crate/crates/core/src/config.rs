//! TOML run configuration. Every key has a default and unknown keys are
//! rejected; validation errors name the offending key.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cell::CellSpec;
use crate::error::{Error, Result};
use crate::grad::Engine;
use crate::lab::{parse_grid, ExperimentKind, ExperimentSpec, TrainTask};
use crate::solver::{SolverConfig, StopRule};
use crate::tensor::PrecisionPolicy;

/// A grid given either as `"lo:hi:step"` / `"a,b,c"` or as a TOML array.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Text(String),
    List(Vec<f64>),
}

impl GridValue {
    pub fn values(&self, field: &str) -> Result<Vec<f64>> {
        match self {
            GridValue::Text(s) => parse_grid(field, s),
            GridValue::List(v) => Ok(v.clone()),
        }
    }

    fn counts(&self, field: &str) -> Result<Vec<usize>> {
        self.values(field)?
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::config(field, format!("{v} is not a non-negative integer")))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub beta: f64,
    pub tol: f64,
    pub max_steps: usize,
    /// `double`, `single` or `mixed`.
    pub precision: String,
    pub stop_rule: StopRule,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            beta: 0.8,
            tol: 1e-6,
            max_steps: 100,
            precision: "double".into(),
            stop_rule: StopRule::Residual,
        }
    }
}

/// Grids for sweep, reconstruct and grad-bench. Unset keys take the
/// experiment's own defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub betas: Option<GridValue>,
    pub ks: Option<GridValue>,
    pub steps: Option<GridValue>,
    pub policies: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub width: Option<usize>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NfeSection {
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for NfeSection {
    fn default() -> Self {
        Self {
            n_grid: vec![1, 2, 3, 4, 8],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// CSV destination; relative paths honour `REVDEQ_OUT_DIR`.
    pub out: Option<PathBuf>,
    pub cell: String,
    pub engine: Engine,
    pub fd_eps: f64,
    pub checkpoint: Option<PathBuf>,
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
    pub train: TrainTask,
    pub nfe: NfeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            cell: "mlp:8:16:0.9".into(),
            engine: Engine::Reversible,
            fd_eps: crate::finite_diff::DEFAULT_EPS,
            checkpoint: None,
            solver: SolverSection::default(),
            experiment: ExperimentSection::default(),
            train: TrainTask::default(),
            nfe: NfeSection::default(),
        }
    }
}

fn within(section: &str, err: Error) -> Error {
    match err {
        Error::Config { field, reason } => Error::Config {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn cell_spec(&self) -> Result<CellSpec> {
        self.cell.parse()
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let precision: PrecisionPolicy = s.precision.parse().map_err(|e| within("solver", e))?;
        let cfg = SolverConfig {
            beta: s.beta,
            tol: s.tol,
            max_steps: s.max_steps,
            precision,
            stop_rule: s.stop_rule,
        };
        cfg.validate().map_err(|e| within("solver", e))?;
        Ok(cfg)
    }

    pub fn experiment_spec(&self, kind: ExperimentKind) -> Result<ExperimentSpec> {
        let e = &self.experiment;
        let mut spec = ExperimentSpec::new(kind);
        let w = |err| within("experiment", err);
        if let Some(g) = &e.betas {
            spec.betas = g.values("betas").map_err(w)?;
        }
        if let Some(g) = &e.ks {
            spec.ks = g.values("ks").map_err(w)?;
        }
        if let Some(g) = &e.steps {
            spec.steps = g.counts("steps").map_err(w)?;
        }
        if let Some(p) = &e.policies {
            spec.policies = p.iter().map(|s| s.parse()).collect::<Result<_>>().map_err(w)?;
        }
        if let Some(s) = &e.seeds {
            spec.seeds = s.clone();
        }
        spec.tol = e.tol.unwrap_or(spec.tol);
        spec.max_steps = e.max_steps.unwrap_or(spec.max_steps);
        spec.width = e.width.unwrap_or(spec.width);
        spec.hidden = e.hidden.unwrap_or(spec.hidden);
        spec.out = self.out.clone();
        spec.validate().map_err(w)?;
        Ok(spec)
    }

    pub fn train_task(&self) -> Result<TrainTask> {
        self.train.validate().map_err(|e| within("train", e))?;
        Ok(self.train.clone())
    }

    /// Everything that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        self.cell_spec()?;
        self.solver_config()?;
        if !(self.fd_eps > 0.0) {
            return Err(Error::config("fd_eps", "must be positive"));
        }
        for kind in [
            ExperimentKind::Sweep,
            ExperimentKind::Reconstruct,
            ExperimentKind::GradBench,
        ] {
            if kind == ExperimentKind::Sweep || self.experiment.betas.is_none() {
                self.experiment_spec(kind)?;
            }
        }
        self.train_task()?;
        if self.nfe.n_grid.is_empty() || self.nfe.seeds.is_empty() {
            return Err(Error::config("nfe", "n_grid and seeds must not be empty"));
        }
        Ok(())
    }
}
