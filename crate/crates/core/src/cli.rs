//! Command-line front end used by the `revdeq` binary.
//!
//! Flags override the values loaded from `--config`; every flag maps to one
//! [`RunConfig`] key. Exit codes: 0 success, 1 configuration or I/O error,
//! 2 numerical divergence (and, for `solve`, a run that did not converge).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cell::EquilibriumFunction;
use crate::checkpoint::Checkpoint;
use crate::config::{GridValue, RunConfig};
use crate::error::{Error, Result};
use crate::grad::{grad_check, Engine};
use crate::lab::{
    convergence_sweep, gradient_accuracy_bench, nfe_sweep, reconstruction_bench, resolve_output, resume, train,
    write_csv, Dataset, ExperimentKind, TrainState,
};
use crate::solver::{naive_iterate, relaxed_iterate, reversible_forward, SolveState, StopRule};
use crate::tensor::{NormKind, Tensor};

#[derive(Debug, Parser)]
#[command(
    name = "revdeq",
    version,
    about = "Reversible deep equilibrium solvers, gradients and experiments"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the equilibrium of one cell and print a summary.
    Solve(SolveArgs),
    /// Compare an engine's gradient with finite differences.
    GradCheck(GradCheckArgs),
    /// Convergence-rate sweep over β and k on scalar linear cells.
    Sweep(SweepArgs),
    /// Forward/backward round-trip error benchmark.
    Reconstruct(GridArgs),
    /// Gradient accuracy of every engine against a long unrolled oracle.
    GradBench(GridArgs),
    /// Train an equilibrium model on a toy task.
    Train(TrainArgs),
    /// Final training loss as a function of solver steps.
    Nfe(NfeArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Cell: `linear:<a>` or `mlp:<width>:<hidden>:<k>` [cell].
    #[arg(long)]
    pub cell: Option<String>,
    /// Relaxation parameter [solver.beta].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Residual tolerance [solver.tol].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Step budget [solver.max_steps].
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// double, single or mixed [solver.precision].
    #[arg(long)]
    pub precision: Option<String>,
    /// residual or fixed_steps [solver.stop_rule].
    #[arg(long)]
    pub stop_rule: Option<String>,
    /// reversible, relaxed or naive.
    #[arg(long, default_value = "reversible")]
    pub method: String,
    /// Seed for cell weights and input [seed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV with one summary row [out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// reversible, ift, unrolled or jfb [engine].
    #[arg(long)]
    pub engine: Option<String>,
    /// [cell]
    #[arg(long)]
    pub cell: Option<String>,
    /// Solver steps N [solver.max_steps].
    #[arg(long)]
    pub steps: Option<usize>,
    /// [solver.beta]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Finite-difference step [fd_eps].
    #[arg(long)]
    pub fd_eps: Option<f64>,
    /// [seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// β grid, `lo:hi:step` or comma list [experiment.betas].
    #[arg(long)]
    pub beta: Option<String>,
    /// k grid [experiment.ks].
    #[arg(long)]
    pub k: Option<String>,
    /// [experiment.tol]
    #[arg(long)]
    pub tol: Option<f64>,
    /// [experiment.max_steps]
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// [out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// β grid [experiment.betas].
    #[arg(long)]
    pub beta: Option<String>,
    /// k grid [experiment.ks].
    #[arg(long)]
    pub k: Option<String>,
    /// Step grid [experiment.steps].
    #[arg(long)]
    pub steps: Option<String>,
    /// Comma list of double, single, mixed [experiment.policies].
    #[arg(long)]
    pub policies: Option<String>,
    /// Comma list of seeds [experiment.seeds].
    #[arg(long)]
    pub seeds: Option<String>,
    /// [experiment.width]
    #[arg(long)]
    pub width: Option<usize>,
    /// [experiment.hidden]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// [out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// spirals or regression [train.dataset].
    #[arg(long)]
    pub task: Option<String>,
    /// [engine]
    #[arg(long)]
    pub engine: Option<String>,
    /// Training steps [train.steps].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Solver steps per forward pass [train.solver_steps].
    #[arg(long)]
    pub solver_steps: Option<usize>,
    /// [train.beta]
    #[arg(long)]
    pub beta: Option<f64>,
    /// [train.lr]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [train.batch_size]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [train.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the final state here [checkpoint].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Metrics CSV [out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NfeArgs {
    /// [train.dataset]
    #[arg(long)]
    pub task: Option<String>,
    /// [engine]
    #[arg(long)]
    pub engine: Option<String>,
    /// Comma list of solver steps N [nfe.n_grid].
    #[arg(long)]
    pub n_grid: Option<String>,
    /// Comma list of seeds [nfe.seeds].
    #[arg(long)]
    pub seeds: Option<String>,
    /// Training steps per run [train.steps].
    #[arg(long)]
    pub steps: Option<usize>,
    /// [out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn list<T: std::str::FromStr>(field: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::config(field, format!("cannot parse `{t}`")))
        })
        .collect()
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn output_path(cfg: &RunConfig, default: &str) -> PathBuf {
    resolve_output(cfg.out.as_deref().unwrap_or(Path::new(default)))
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } | Error::Reconstruction { .. } => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Solve(a) => solve(&mut cfg, a),
        Command::GradCheck(a) => run_grad_check(&mut cfg, a),
        Command::Sweep(a) => {
            set(&mut cfg.experiment.betas, a.beta.map(|s| Some(GridValue::Text(s))));
            set(&mut cfg.experiment.ks, a.k.map(|s| Some(GridValue::Text(s))));
            set(&mut cfg.experiment.tol, a.tol.map(Some));
            set(&mut cfg.experiment.max_steps, a.max_steps.map(Some));
            set(&mut cfg.out, a.out.map(Some));
            let spec = cfg.experiment_spec(ExperimentKind::Sweep)?;
            let rows = convergence_sweep(&spec)?;
            finish(&cfg, "sweep.csv", &rows)
        }
        Command::Reconstruct(a) => {
            apply_grid(&mut cfg, a)?;
            let rows = reconstruction_bench(&cfg.experiment_spec(ExperimentKind::Reconstruct)?)?;
            finish(&cfg, "reconstruct.csv", &rows)
        }
        Command::GradBench(a) => {
            apply_grid(&mut cfg, a)?;
            let rows = gradient_accuracy_bench(&cfg.experiment_spec(ExperimentKind::GradBench)?)?;
            finish(&cfg, "grad_bench.csv", &rows)
        }
        Command::Train(a) => run_train(&mut cfg, a),
        Command::Nfe(a) => {
            if let Some(t) = a.task {
                cfg.train.dataset = t.parse::<Dataset>()?;
            }
            if let Some(e) = a.engine {
                cfg.engine = e.parse()?;
            }
            if let Some(n) = a.n_grid {
                cfg.nfe.n_grid = list("nfe.n_grid", &n)?;
            }
            if let Some(s) = a.seeds {
                cfg.nfe.seeds = list("nfe.seeds", &s)?;
            }
            set(&mut cfg.train.steps, a.steps);
            set(&mut cfg.out, a.out.map(Some));
            cfg.validate()?;
            let rows = nfe_sweep(&cfg.train_task()?, cfg.engine, &cfg.nfe.n_grid, &cfg.nfe.seeds)?;
            for r in &rows {
                println!("N={:<3} nfe={:<3} median final loss {:.6}", r.n, r.nfe, r.final_loss);
            }
            finish(&cfg, "nfe.csv", &rows)
        }
    }
}

fn apply_grid(cfg: &mut RunConfig, a: GridArgs) -> Result<()> {
    set(&mut cfg.experiment.betas, a.beta.map(|s| Some(GridValue::Text(s))));
    set(&mut cfg.experiment.ks, a.k.map(|s| Some(GridValue::Text(s))));
    set(&mut cfg.experiment.steps, a.steps.map(|s| Some(GridValue::Text(s))));
    if let Some(p) = a.policies {
        cfg.experiment.policies = Some(p.split(',').map(|s| s.trim().to_string()).collect());
    }
    if let Some(s) = a.seeds {
        cfg.experiment.seeds = Some(list("experiment.seeds", &s)?);
    }
    set(&mut cfg.experiment.width, a.width.map(Some));
    set(&mut cfg.experiment.hidden, a.hidden.map(Some));
    set(&mut cfg.out, a.out.map(Some));
    Ok(())
}

fn finish<T: Serialize>(cfg: &RunConfig, default: &str, rows: &[T]) -> Result<ExitCode> {
    let path = output_path(cfg, default);
    write_csv(&path, rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SolveRow {
    cell: String,
    method: String,
    beta: f64,
    tol: f64,
    steps_taken: usize,
    nfe: usize,
    residual: f64,
    converged: bool,
    z_max_norm: f64,
}

fn solve(cfg: &mut RunConfig, a: SolveArgs) -> Result<ExitCode> {
    set(&mut cfg.cell, a.cell);
    set(&mut cfg.solver.beta, a.beta);
    set(&mut cfg.solver.tol, a.tol);
    set(&mut cfg.solver.max_steps, a.max_steps);
    set(&mut cfg.solver.precision, a.precision);
    if let Some(r) = a.stop_rule {
        cfg.solver.stop_rule = r.parse()?;
    }
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.out, a.out.map(Some));

    let spec = cfg.cell_spec()?;
    let solver = cfg.solver_config()?;
    let cell = spec.build(cfg.seed)?;
    let x = spec.default_input(cfg.seed);
    let result = match a.method.as_str() {
        "reversible" => reversible_forward(&cell, &x, &solver),
        "relaxed" => relaxed_iterate(&cell, &x, &solver),
        "naive" => naive_iterate(&cell, &x, &solver),
        other => {
            return Err(Error::config(
                "method",
                format!("unknown method `{other}` (reversible, relaxed, naive)"),
            ))
        }
    };
    let result = match result {
        Ok(r) => r,
        Err(err @ Error::Divergence { .. }) => {
            println!("cell {spec}: diverged");
            return Err(err);
        }
        Err(e) => return Err(e),
    };
    println!("cell      {spec} (declared k = {:.6})", cell.lipschitz_bound());
    println!(
        "method    {} (beta = {}, tol = {:e}, precision = {})",
        a.method,
        solver.beta,
        solver.tol,
        solver.precision.label()
    );
    println!("steps     {} (nfe = {})", result.steps_taken, result.nfe);
    println!("residual  {:e}", result.residual);
    println!("converged {}", result.converged);
    print_vector("z", result.state.z());
    if let SolveState::Coupled(s) = &result.state {
        print_vector("y", &s.y);
    }
    if cfg.out.is_some() {
        let row = SolveRow {
            cell: spec.to_string(),
            method: a.method.clone(),
            beta: solver.beta,
            tol: solver.tol,
            steps_taken: result.steps_taken,
            nfe: result.nfe,
            residual: result.residual,
            converged: result.converged,
            z_max_norm: result.state.z().norm(NormKind::Max),
        };
        finish(cfg, "solve.csv", &[row])?;
    }
    Ok(if result.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn print_vector(name: &str, t: &Tensor) {
    const SHOWN: usize = 8;
    let head: Vec<String> = t.data().iter().take(SHOWN).map(|v| format!("{v:.9}")).collect();
    let more = if t.len() > SHOWN { ", ..." } else { "" };
    println!("{name:<9} [{}{more}]", head.join(", "));
}

#[derive(Serialize)]
struct GradCheckRow {
    engine: String,
    param: String,
    steps: usize,
    max_abs: f64,
    max_rel: f64,
}

fn run_grad_check(cfg: &mut RunConfig, a: GradCheckArgs) -> Result<ExitCode> {
    if let Some(e) = a.engine {
        cfg.engine = e.parse::<Engine>()?;
    }
    set(&mut cfg.cell, a.cell);
    if let Some(n) = a.steps {
        cfg.solver.max_steps = n;
        cfg.solver.stop_rule = StopRule::FixedSteps;
    }
    set(&mut cfg.solver.beta, a.beta);
    set(&mut cfg.fd_eps, a.fd_eps);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.out, a.out.map(Some));

    let spec = cfg.cell_spec()?;
    let solver = cfg.solver_config()?;
    let cell = spec.build(cfg.seed)?;
    let x = spec.default_input(cfg.seed);
    let weights = Tensor::vector((0..cell.state_dim()).map(|i| 1.0 - 0.1 * i as f64).collect());
    let report = grad_check(&cell, &x, &solver, cfg.engine, &weights, cfg.fd_eps)?;
    println!(
        "engine {} vs central differences (eps = {:e}), N = {}",
        report.engine, cfg.fd_eps, report.steps
    );
    for e in &report.entries {
        println!("  {:<4} max abs {:.3e}  max rel {:.3e}", e.name, e.max_abs, e.max_rel);
    }
    println!("max relative discrepancy {:.3e}", report.max_rel());
    if cfg.out.is_some() {
        let rows: Vec<GradCheckRow> = report
            .entries
            .iter()
            .map(|e| GradCheckRow {
                engine: report.engine.to_string(),
                param: e.name.clone(),
                steps: report.steps,
                max_abs: e.max_abs,
                max_rel: e.max_rel,
            })
            .collect();
        finish(cfg, "grad_check.csv", &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_train(cfg: &mut RunConfig, a: TrainArgs) -> Result<ExitCode> {
    if let Some(t) = a.task {
        cfg.train.dataset = t.parse()?;
    }
    if let Some(e) = a.engine {
        cfg.engine = e.parse()?;
    }
    set(&mut cfg.train.steps, a.steps);
    set(&mut cfg.train.solver_steps, a.solver_steps);
    set(&mut cfg.train.beta, a.beta);
    set(&mut cfg.train.lr, a.lr);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.train.seed, a.seed);
    set(&mut cfg.checkpoint, a.checkpoint.map(Some));
    set(&mut cfg.out, a.out.map(Some));

    let task = cfg.train_task()?;
    let outcome = match &a.resume {
        Some(path) => {
            let state: TrainState = Checkpoint::load(path)?.to_state()?;
            resume(&task, cfg.engine, state)?
        }
        None => train(&task, cfg.engine)?,
    };
    if let Some(msg) = &outcome.diverged {
        println!("training halted: {msg}");
    }
    match outcome.final_accuracy {
        Some(acc) => println!(
            "step {}: loss {:.6}, accuracy {:.4}",
            outcome.state.step, outcome.final_loss, acc
        ),
        None => println!("step {}: loss {:.6}", outcome.state.step, outcome.final_loss),
    }
    if let Some(path) = &cfg.checkpoint {
        let path = resolve_output(path);
        Checkpoint::from_state(&outcome.state).save(&path)?;
        println!("checkpoint written to {}", path.display());
    }
    finish(cfg, "train.csv", &outcome.metrics)
}
