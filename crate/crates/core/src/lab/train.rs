use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::median;
use crate::cell::{make_mlp_cell, EquilibriumFunction, MlpCell};
use crate::error::{Error, Result};
use crate::grad::{ift_gradient, jfb_gradient, reversible_backprop, unrolled_gradient, Engine};
use crate::solver::{reversible_forward, SolverConfig};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    /// Two interleaved spirals, binary labels, logistic loss.
    Spirals,
    /// Smooth scalar target on the square, squared loss.
    Regression,
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spirals" | "two-spirals" | "two_spirals" => Ok(Dataset::Spirals),
            "regression" | "synthetic-regression" => Ok(Dataset::Regression),
            other => Err(Error::config(
                "task",
                format!("unknown dataset `{other}` (spirals, regression)"),
            )),
        }
    }
}

/// Decay-on-plateau step size. Every `interval` training steps the mean
/// batch loss of that interval is compared with the best so far; after more
/// than `patience` intervals without a decrease the step size is multiplied
/// by `factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauSchedule {
    pub interval: usize,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self {
            interval: 200,
            patience: 10,
            factor: 0.5,
            min_lr: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainTask {
    pub dataset: Dataset,
    pub samples: usize,
    pub noise: f64,
    /// Spiral turns.
    pub turns: f64,
    pub width: usize,
    pub hidden: usize,
    /// Lipschitz constant of the initial cell.
    pub k_init: f64,
    /// Weights are projected back to this Lipschitz bound after each step.
    pub k_max: f64,
    /// Scale of the input embedding at initialisation.
    pub embed_scale: f64,
    pub beta: f64,
    /// Reversible solver steps per forward pass.
    pub solver_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: PlateauSchedule,
    /// Evaluate on the full dataset every this many steps (and at the end).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainTask {
    fn default() -> Self {
        Self {
            dataset: Dataset::Spirals,
            samples: 200,
            noise: 0.02,
            turns: 1.0,
            width: 8,
            hidden: 32,
            k_init: 0.5,
            k_max: 0.7,
            embed_scale: 3.0,
            beta: 0.8,
            solver_steps: 4,
            steps: 2000,
            batch_size: 16,
            lr: 0.2,
            // 2000-step runs: check every 100 steps, decay after two flat checks
            schedule: PlateauSchedule {
                interval: 100,
                patience: 1,
                ..PlateauSchedule::default()
            },
            eval_every: 100,
            seed: 0,
        }
    }
}

impl TrainTask {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::config("samples", "need at least two samples"));
        }
        if self.width == 0 || self.hidden == 0 {
            return Err(Error::config("width/hidden", "layer sizes must be positive"));
        }
        if !(self.k_init > 0.0 && self.k_init < 1.0) {
            return Err(Error::config("k_init", "must lie in (0, 1)"));
        }
        if !(self.k_max > 0.0 && self.k_max < 1.0) {
            return Err(Error::config("k_max", "must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.schedule.interval == 0 || !(self.schedule.factor > 0.0 && self.schedule.factor < 1.0) {
            return Err(Error::config(
                "schedule",
                "interval must be positive and factor in (0, 1)",
            ));
        }
        if self.solver_steps > 0 {
            self.solver_config().validate_reversible()?;
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig::fixed_steps(self.solver_steps.max(1)).with_beta(self.beta)
    }

    /// Inputs in `[-1, 1]²` and targets, generated from the task seed.
    pub fn generate(&self) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0da7_a5e7);
        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("non-negative std");
        let mut xs = Vec::with_capacity(self.samples);
        let mut ys = Vec::with_capacity(self.samples);
        match self.dataset {
            Dataset::Spirals => {
                let per_class = self.samples / 2;
                for i in 0..self.samples {
                    let class = i % 2;
                    let t = (i / 2) as f64 / per_class.max(1) as f64;
                    let radius = 0.15 + 0.85 * t;
                    let angle = self.turns * 2.0 * std::f64::consts::PI * t + class as f64 * std::f64::consts::PI;
                    xs.push([
                        radius * angle.cos() + noise.sample(&mut rng),
                        radius * angle.sin() + noise.sample(&mut rng),
                    ]);
                    ys.push(class as f64);
                }
            }
            Dataset::Regression => {
                for _ in 0..self.samples {
                    let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    let y = 0.5 * (std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).cos();
                    xs.push(p);
                    ys.push(y + noise.sample(&mut rng));
                }
            }
        }
        (xs, ys)
    }
}

/// Equilibrium model: `x = U p + c`, `z* = f(z*, x)`, output `r · z* + r₀`.
#[derive(Clone, Debug)]
pub struct Model {
    pub cell: MlpCell,
    pub embed: Tensor,
    pub embed_bias: Tensor,
    pub readout: Tensor,
    pub readout_bias: f64,
}

const HEAD_NAMES: [&str; 4] = ["embed", "embed_bias", "readout", "readout_bias"];

impl Model {
    pub fn init(task: &TrainTask) -> Result<Self> {
        let cell = make_mlp_cell(task.width, task.hidden, task.k_init, task.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(task.seed ^ 0x4ead);
        let mut draw = |n: usize, std: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    std * v
                })
                .collect()
        };
        let embed = Tensor::new(
            vec![task.hidden, 2],
            draw(task.hidden * 2, task.embed_scale),
            Precision::Double,
        )?;
        let embed_bias = Tensor::vector(draw(task.hidden, 1.0));
        let readout = Tensor::vector(draw(task.width, 1.0 / (task.width as f64).sqrt()));
        Ok(Self {
            cell,
            embed,
            embed_bias,
            readout,
            readout_bias: 0.0,
        })
    }

    /// All parameters with stable names, cell first.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .cell
            .param_names()
            .iter()
            .zip(self.cell.params())
            .map(|(n, p)| (format!("cell.{n}"), p.clone()))
            .collect();
        let heads = [
            self.embed.clone(),
            self.embed_bias.clone(),
            self.readout.clone(),
            Tensor::scalar(self.readout_bias),
        ];
        out.extend(HEAD_NAMES.iter().zip(heads).map(|(n, t)| (n.to_string(), t)));
        out
    }

    pub fn from_named_params(named: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: &str| -> Result<Tensor> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let cell_params = ["W1", "b1", "W2", "b2"]
            .iter()
            .map(|n| find(&format!("cell.{n}")))
            .collect::<Result<Vec<_>>>()?;
        let proto = make_mlp_cell(1, 1, 0.5, 0)?;
        let readout_bias = find("readout_bias")?;
        if readout_bias.len() != 1 {
            return Err(Error::Checkpoint("readout_bias must hold one value".into()));
        }
        Ok(Self {
            cell: proto.with_params(cell_params)?,
            embed: find("embed")?,
            embed_bias: find("embed_bias")?,
            readout: find("readout")?,
            readout_bias: readout_bias.data()[0],
        })
    }

    /// Largest absolute coordinate difference over all parameters.
    pub fn max_param_diff(&self, other: &Model) -> Result<f64> {
        let mut worst = 0.0f64;
        for ((_, a), (_, b)) in self.named_params().iter().zip(other.named_params().iter()) {
            worst = worst.max(a.max_abs_diff(b)?);
        }
        Ok(worst)
    }

    fn embed_input(&self, p: &[f64; 2]) -> Result<Tensor> {
        self.embed.matvec(&Tensor::vector(p.to_vec()))?.add(&self.embed_bias)
    }

    fn equilibrium(&self, x: &Tensor, task: &TrainTask) -> Result<Tensor> {
        if task.solver_steps == 0 {
            return Ok(Tensor::zeros(&[self.cell.state_dim()], Precision::Double));
        }
        Ok(reversible_forward(&self.cell, x, &task.solver_config())?
            .state
            .z()
            .clone())
    }

    fn head(&self, z: &Tensor) -> f64 {
        self.readout
            .data()
            .iter()
            .zip(z.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.readout_bias
    }

    /// Model output for one input.
    pub fn predict(&self, p: &[f64; 2], task: &TrainTask) -> Result<f64> {
        let x = self.embed_input(p)?;
        Ok(self.head(&self.equilibrium(&x, task)?))
    }

    /// Mean loss and, for classification, accuracy over a dataset.
    pub fn evaluate(&self, xs: &[[f64; 2]], ys: &[f64], task: &TrainTask) -> Result<(f64, Option<f64>)> {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (p, &t) in xs.iter().zip(ys) {
            let out = self.predict(p, task)?;
            loss += loss_and_slope(task.dataset, out, t).0;
            if (out > 0.0) == (t > 0.5) {
                correct += 1;
            }
        }
        let n = xs.len() as f64;
        let acc = (task.dataset == Dataset::Spirals).then(|| correct as f64 / n);
        Ok((loss / n, acc))
    }
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Loss for one output and its derivative with respect to the output.
fn loss_and_slope(dataset: Dataset, out: f64, target: f64) -> (f64, f64) {
    match dataset {
        Dataset::Spirals => (softplus(out) - target * out, sigmoid(out) - target),
        Dataset::Regression => (0.5 * (out - target).powi(2), out - target),
    }
}

struct Grads {
    cell: Vec<Tensor>,
    embed: Tensor,
    embed_bias: Tensor,
    readout: Tensor,
    readout_bias: f64,
    nfe: usize,
}

fn batch_gradient(
    model: &Model,
    batch: &[usize],
    xs: &[[f64; 2]],
    ys: &[f64],
    task: &TrainTask,
    engine: Engine,
) -> Result<(f64, Grads)> {
    let cfg = task.solver_config();
    let mut g = Grads {
        cell: model.cell.params().iter().map(Tensor::zeros_like).collect(),
        embed: Tensor::zeros_like(&model.embed),
        embed_bias: Tensor::zeros_like(&model.embed_bias),
        readout: Tensor::zeros_like(&model.readout),
        readout_bias: 0.0,
        nfe: 0,
    };
    let mut total = 0.0;
    for &i in batch {
        let p = Tensor::vector(xs[i].to_vec());
        let x = model.embed_input(&xs[i])?;
        let (z, forward) = if task.solver_steps == 0 {
            (Tensor::zeros(&[model.cell.state_dim()], Precision::Double), None)
        } else {
            let fwd = reversible_forward(&model.cell, &x, &cfg)?;
            (fwd.state.z().clone(), Some(fwd))
        };
        let (loss, slope) = loss_and_slope(task.dataset, model.head(&z), ys[i]);
        total += loss;
        g.readout = g.readout.add(&z.scale(slope))?;
        g.readout_bias += slope;
        let Some(fwd) = forward else { continue };
        let cot = model.readout.scale(slope);
        let report = match engine {
            Engine::Reversible => reversible_backprop(&model.cell, &x, &fwd, &cot, &cfg)?,
            Engine::Unrolled => unrolled_gradient(&model.cell, &x, &cfg, &cot)?,
            Engine::Ift => ift_gradient(&model.cell, &x, &z, &cot, &cfg)?,
            Engine::Jfb => jfb_gradient(&model.cell, &x, &z, &cot)?,
        };
        g.nfe += fwd.nfe + report.nfe_backward;
        for (acc, t) in g.cell.iter_mut().zip(&report.theta_grad) {
            *acc = acc.add(t)?;
        }
        let x_bar = report.x_grad.expect("engines report x gradients");
        g.embed = g.embed.add(&Tensor::outer(&x_bar, &p))?;
        g.embed_bias = g.embed_bias.add(&x_bar)?;
    }
    Ok((total / batch.len() as f64, g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub batch_loss: f64,
    /// Full-dataset loss, on evaluation steps.
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub lr: f64,
    /// Evaluations of `f` spent on training so far, forward and backward.
    pub nfe_cumulative: usize,
}

/// Everything needed to continue a run: parameters, optimizer and schedule
/// state, step counter and seed.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub step: usize,
    pub lr: f64,
    pub recent_losses: Vec<f64>,
    pub best_interval_loss: f64,
    pub bad_intervals: usize,
    pub nfe: usize,
    pub seed: u64,
}

impl TrainState {
    pub fn new(task: &TrainTask) -> Result<Self> {
        Ok(Self {
            model: Model::init(task)?,
            step: 0,
            lr: task.lr,
            recent_losses: Vec::new(),
            best_interval_loss: f64::INFINITY,
            bad_intervals: 0,
            nfe: 0,
            seed: task.seed,
        })
    }

    fn observe(&mut self, loss: f64, schedule: &PlateauSchedule) {
        self.recent_losses.push(loss);
        if self.recent_losses.len() < schedule.interval {
            return;
        }
        let mean = self.recent_losses.iter().sum::<f64>() / schedule.interval as f64;
        self.recent_losses.clear();
        if mean < self.best_interval_loss {
            self.best_interval_loss = mean;
            self.bad_intervals = 0;
        } else {
            self.bad_intervals += 1;
            if self.bad_intervals > schedule.patience {
                self.lr = (self.lr * schedule.factor).max(schedule.min_lr);
                self.bad_intervals = 0;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    /// Set when a solve diverged; training stopped at that step.
    pub diverged: Option<String>,
}

/// Train from scratch with mini-batch SGD.
pub fn train(task: &TrainTask, engine: Engine) -> Result<TrainOutcome> {
    task.validate()?;
    resume(task, engine, TrainState::new(task)?)
}

/// Continue training `state` until `task.steps` steps are done. Batches
/// depend only on the seed and the step index, so a resumed run matches an
/// uninterrupted one.
pub fn resume(task: &TrainTask, engine: Engine, mut state: TrainState) -> Result<TrainOutcome> {
    task.validate()?;
    let (xs, ys) = task.generate();
    let mut metrics = Vec::new();
    let mut diverged = None;
    while state.step < task.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_stream(state.step as u64 + 1);
        let batch: Vec<usize> = (0..task.batch_size).map(|_| rng.gen_range(0..xs.len())).collect();
        let (batch_loss, g) = match batch_gradient(&state.model, &batch, &xs, &ys, task, engine) {
            Ok(v) => v,
            Err(e @ (Error::Divergence { .. } | Error::Reconstruction { .. })) => {
                diverged = Some(format!("step {}: {e}", state.step + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        let scale = state.lr / batch.len() as f64;
        let m = &state.model;
        let cell_params = m
            .cell
            .params()
            .iter()
            .zip(&g.cell)
            .map(|(p, d)| p.sub(&d.scale(scale)))
            .collect::<Result<Vec<_>>>()?;
        state.model = Model {
            cell: m.cell.with_params(cell_params)?.clip_lipschitz(task.k_max)?,
            embed: m.embed.sub(&g.embed.scale(scale))?,
            embed_bias: m.embed_bias.sub(&g.embed_bias.scale(scale))?,
            readout: m.readout.sub(&g.readout.scale(scale))?,
            readout_bias: m.readout_bias - scale * g.readout_bias,
        };
        state.step += 1;
        state.nfe += g.nfe;
        let lr_used = state.lr;
        state.observe(batch_loss, &task.schedule);

        let (loss, accuracy) = if state.step.is_multiple_of(task.eval_every) || state.step == task.steps {
            let (l, a) = state.model.evaluate(&xs, &ys, task)?;
            (Some(l), a)
        } else {
            (None, None)
        };
        metrics.push(MetricsRow {
            step: state.step,
            batch_loss,
            loss,
            accuracy,
            lr: lr_used,
            nfe_cumulative: state.nfe,
        });
    }
    let (final_loss, final_accuracy) = state.model.evaluate(&xs, &ys, task)?;
    Ok(TrainOutcome {
        state,
        metrics,
        final_loss,
        final_accuracy,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NfeRow {
    pub n: usize,
    pub nfe: usize,
    /// Median over seeds of the final full-dataset loss.
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub seeds: usize,
}

/// Train once per (N, seed) and report medians per N. `nfe` is the forward
/// cost of one solve, `2N`.
pub fn nfe_sweep(task: &TrainTask, engine: Engine, n_grid: &[usize], seeds: &[u64]) -> Result<Vec<NfeRow>> {
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(Error::config("steps", "N grid and seeds must not be empty"));
    }
    n_grid
        .par_iter()
        .map(|&n| {
            let runs = seeds
                .iter()
                .map(|&seed| {
                    let t = TrainTask {
                        solver_steps: n,
                        seed,
                        ..task.clone()
                    };
                    train(&t, engine)
                })
                .collect::<Result<Vec<_>>>()?;
            let losses: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
            let accs: Vec<f64> = runs.iter().filter_map(|r| r.final_accuracy).collect();
            Ok(NfeRow {
                n,
                nfe: 2 * n,
                final_loss: median(&losses),
                final_accuracy: (!accs.is_empty()).then(|| median(&accs)),
                seeds: seeds.len(),
            })
        })
        .collect()
}
