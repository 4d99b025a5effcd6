//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any of them failed.
//!
//! Run with `cargo test --test acceptance`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use revdeq::cell::{make_linear_cell, make_mlp_cell, EquilibriumFunction, LinearCell, MlpCell};
use revdeq::grad::{grad_check, ift_gradient, relative_error, solve_and_differentiate, unrolled_gradient, Engine};
use revdeq::lab::{nfe_sweep, roundtrip_error, train, TrainTask};
use revdeq::solver::{
    beta_upper_bound, rate_constant, reversible_forward, reversible_forward_step, ReversibleState, SolveState,
    SolverConfig,
};
use revdeq::tensor::{NormKind, PrecisionPolicy, Tensor};

// ---------------------------------------------------------------------------
// Reporting

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn within_budget(verdict: Verdict, elapsed: Duration, budget: Option<Duration>) -> Verdict {
    match budget {
        Some(limit) if elapsed > limit => Verdict::new(
            false,
            format!(
                "{}; took {:.1} s, limit {} s",
                verdict.detail,
                elapsed.as_secs_f64(),
                limit.as_secs()
            ),
        ),
        _ => verdict,
    }
}

// ---------------------------------------------------------------------------
// Shared fixtures

/// 20 cells of width 8, hidden 16 with Lipschitz constants spread over [0.1, 0.9].
fn mlp_cells() -> Vec<(MlpCell, Tensor, Tensor)> {
    (0..20u64)
        .map(|i| {
            let k = 0.1 + 0.8 * i as f64 / 19.0;
            let cell = make_mlp_cell(8, 16, k, 1000 + i).unwrap();
            let x = Tensor::vector((0..16).map(|j| (0.37 * (i * 16 + j) as f64).sin()).collect());
            let cot = Tensor::vector((0..8).map(|j| (1.3 * (i + j) as f64).cos()).collect());
            (cell, x, cot)
        })
        .collect()
}

const BETAS: [f64; 3] = [0.5, 0.8, 0.9];

/// A few 3×3 matrices: symmetric, non-normal, rotation-like.
fn linear_cells(k: f64) -> Vec<LinearCell> {
    let mats = [
        [[0.6, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.3]],
        [[0.4, 0.9, 0.0], [0.0, 0.4, 0.9], [0.0, 0.0, 0.4]],
        [[0.0, -1.0, 0.2], [1.0, 0.0, 0.1], [0.0, 0.3, 0.5]],
    ];
    mats.iter()
        .map(|m| {
            let rows: Vec<Vec<f64>> = m.iter().map(|r| r.to_vec()).collect();
            make_linear_cell(
                Tensor::matrix(&rows).unwrap(),
                Tensor::vector(vec![1.0, -0.5, 2.0]),
                Some(k),
            )
            .unwrap()
        })
        .collect()
}

fn betas_inside(k: f64) -> Vec<f64> {
    let bound = beta_upper_bound(k).unwrap();
    (1..=10)
        .map(|i| bound * i as f64 / 11.0)
        .filter(|b| (b - 1.0).abs() >= 1e-3)
        .collect()
}

fn analytic(cell: &LinearCell) -> DVector<f64> {
    let n = cell.state_dim();
    let a = DMatrix::from_row_slice(n, n, cell.a().data());
    let rhs = DVector::from_column_slice(cell.b().data());
    (DMatrix::identity(n, n) - a).lu().solve(&rhs).unwrap()
}

fn l2_dist(t: &Tensor, q: &DVector<f64>) -> f64 {
    t.data()
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn max_dist(t: &Tensor, q: &DVector<f64>) -> f64 {
    t.data()
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1. Gradient exactness

fn gradient_exactness() -> Verdict {
    let mut worst = (0.0f64, String::new());
    let mut failures = 0;
    let mut total = 0;
    for (i, (cell, x, cot)) in mlp_cells().iter().enumerate() {
        for beta in BETAS {
            for n in [4, 16, 64] {
                let cfg = SolverConfig::fixed_steps(n).with_beta(beta);
                let rev = match solve_and_differentiate(Engine::Reversible, cell, x, &cfg, cot) {
                    Ok(r) => r,
                    Err(e) => return Verdict::error(format!("cell {i} β={beta} N={n}: {e}")),
                };
                let oracle = unrolled_gradient(cell, x, &cfg, cot).unwrap();
                let err = rev
                    .theta_grad
                    .iter()
                    .zip(&oracle.theta_grad)
                    .map(|(a, b)| relative_error(a, b).unwrap())
                    .fold(0.0, f64::max);
                total += 1;
                if err > 1e-9 {
                    failures += 1;
                }
                if err > worst.0 {
                    worst = (err, format!("cell {i} β={beta} N={n}"));
                }
            }
        }
    }
    Verdict::new(
        failures == 0,
        format!(
            "{failures}/{total} configurations above 1e-9; worst coordinatewise relative error {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Finite-difference oracle

fn finite_difference_oracle() -> Verdict {
    let mut worst = (0.0f64, String::new());
    let mut failures = 0;
    let mut total = 0;
    for (i, (cell, x, cot)) in mlp_cells().iter().enumerate() {
        for beta in BETAS {
            for n in [4, 16, 64] {
                let cfg = SolverConfig::fixed_steps(n).with_beta(beta);
                let report = match grad_check(cell, x, &cfg, Engine::Reversible, cot, 1e-5) {
                    Ok(r) => r,
                    Err(e) => return Verdict::error(format!("cell {i} β={beta} N={n}: {e}")),
                };
                let err = report.max_rel();
                total += 1;
                if err > 1e-5 {
                    failures += 1;
                }
                if err > worst.0 {
                    worst = (err, format!("cell {i} β={beta} N={n}"));
                }
            }
        }
    }
    Verdict::new(
        failures == 0,
        format!(
            "{failures}/{total} configurations above 1e-5; worst relative error {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Convergence theorem

fn convergence_theorem() -> Verdict {
    let mut terminal_fail = 0;
    let mut ratio_fail = 0;
    let mut worst_ratio_excess = f64::NEG_INFINITY;
    let mut worst_terminal = 0.0f64;
    let mut runs = 0;
    for k in [0.1, 0.5, 0.9] {
        for cell in linear_cells(k) {
            let q = analytic(&cell);
            let x = Tensor::vector(vec![0.0; 3]);
            for beta in betas_inside(k) {
                let l = rate_constant(beta, k).unwrap();
                let n_max = (1..=64).rev().find(|&n| l.powi(n) >= 1e-8).unwrap_or(1);
                let mut state = ReversibleState::initial(3, PrecisionPolicy::DOUBLE);
                let e0 = l2_dist(&state.y, &q).max(l2_dist(&state.z, &q));
                let mut prev = e0;
                for n in 1..=n_max {
                    state = reversible_forward_step(&cell, &x, &state, beta, PrecisionPolicy::DOUBLE).unwrap();
                    let e = l2_dist(&state.y, &q).max(l2_dist(&state.z, &q));
                    if n >= 2 && prev > 1e-12 && e > 1e-12 {
                        let excess = e / prev - l;
                        worst_ratio_excess = worst_ratio_excess.max(excess);
                        if excess > 0.01 {
                            ratio_fail += 1;
                        }
                    }
                    prev = e;
                }
                let bound = l.powi(n_max) * e0 * (1.0 + 1e-6);
                worst_terminal = worst_terminal.max(prev / bound);
                if prev > bound {
                    terminal_fail += 1;
                }
                runs += 1;
            }
        }
    }
    Verdict::new(
        terminal_fail == 0 && ratio_fail == 0,
        format!(
            "{runs} runs; terminal error / bound at most {worst_terminal:.3}; \
             largest step ratio − L = {worst_ratio_excess:+.3e} (limit +0.01)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Fixed-point agreement

fn fixed_point_agreement() -> Verdict {
    let eps = 1e-8;
    let mut gap_fail = 0;
    let mut radius_fail = 0;
    let mut worst_gap = 0.0f64;
    let mut worst_radius = 0.0f64;
    let mut runs = 0;
    for k in [0.1, 0.5, 0.9] {
        for cell in linear_cells(k) {
            let q = analytic(&cell);
            let x = Tensor::vector(vec![0.0; 3]);
            for beta in betas_inside(k) {
                let l = rate_constant(beta, k).unwrap();
                let cfg = SolverConfig::default()
                    .with_beta(beta)
                    .with_tol(eps)
                    .with_max_steps(100_000);
                let r = reversible_forward(&cell, &x, &cfg).unwrap();
                let SolveState::Coupled(s) = &r.state else {
                    unreachable!()
                };
                if !r.converged {
                    return Verdict::new(false, format!("k={k} β={beta}: no convergence"));
                }
                let gap = s.y.max_abs_diff(&s.z).unwrap() / eps;
                let radius = eps * (1.0 + l) / (1.0 - l);
                let off = max_dist(&s.y, &q).max(max_dist(&s.z, &q)) / radius;
                worst_gap = worst_gap.max(gap);
                worst_radius = worst_radius.max(off);
                gap_fail += usize::from(gap > 2.0);
                radius_fail += usize::from(off > 1.0);
                runs += 1;
            }
        }
    }
    Verdict::new(
        gap_fail == 0 && radius_fail == 0,
        format!(
            "{runs} runs at ε=1e-8; max ‖y−z‖/ε = {worst_gap:.2} (limit 2, {gap_fail} over); \
             max distance to q* / radius = {worst_radius:.3} (limit 1, {radius_fail} over)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Round-trip reconstruction

fn round_trip() -> Verdict {
    let mut worst_double = 0.0f64;
    let mut dominance_fail = 0;
    let mut instances = 0;
    for k in [0.5, 0.9] {
        for beta in [0.5, 0.6, 0.7, 0.8, 0.9] {
            for seed in 0..5u64 {
                let cell = make_mlp_cell(8, 16, k, seed).unwrap();
                let x = Tensor::vector((0..16).map(|j| (0.3 * (seed * 16 + j) as f64).cos()).collect());
                let double = roundtrip_error(&cell, &x, 32, beta, PrecisionPolicy::DOUBLE).unwrap();
                let mixed = roundtrip_error(&cell, &x, 32, beta, PrecisionPolicy::MIXED).unwrap();
                let single = roundtrip_error(&cell, &x, 32, beta, PrecisionPolicy::SINGLE).unwrap();
                worst_double = worst_double.max(double);
                dominance_fail += usize::from(mixed > single);
                instances += 1;
            }
        }
    }
    Verdict::new(
        worst_double <= 1e-10 && dominance_fail == 0,
        format!(
            "{instances} instances at N=32; worst double error {worst_double:.2e} (limit 1e-10); \
             mixed > single on {dominance_fail}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Constant memory

fn constant_memory() -> Verdict {
    let cell = make_mlp_cell(8, 16, 0.9, 0).unwrap();
    let x = Tensor::vector(vec![0.2; 16]);
    let cot = Tensor::vector(vec![1.0; 8]);
    let mut rev = Vec::new();
    let mut unrolled = Vec::new();
    for n in [8, 64, 512] {
        let cfg = SolverConfig::fixed_steps(n).with_beta(0.5);
        match solve_and_differentiate(Engine::Reversible, &cell, &x, &cfg, &cot) {
            Ok(r) => rev.push(r.peak_stored_tensors),
            Err(e) => return Verdict::error(format!("reversible N={n}: {e}")),
        }
        unrolled.push(unrolled_gradient(&cell, &x, &cfg, &cot).unwrap().peak_stored_tensors);
    }
    let flat = rev.windows(2).all(|w| w[0] == w[1]);
    let growing = unrolled.windows(2).all(|w| w[0] < w[1]);
    Verdict::new(
        flat && growing,
        format!("reversible {rev:?}, unrolled {unrolled:?} for N = 8, 64, 512"),
    )
}

// ---------------------------------------------------------------------------
// 7. IFT approximation gap

fn ift_gap() -> Verdict {
    let k = 0.8;
    let syms = [
        [[0.6, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.3]],
        [[0.1, 0.4, 0.3], [0.4, -0.2, 0.2], [0.3, 0.2, 0.5]],
        [[-0.7, 0.1, 0.0], [0.1, 0.2, 0.0], [0.0, 0.0, 0.4]],
    ];
    let mut fitted = Vec::new();
    for m in &syms {
        let rows: Vec<Vec<f64>> = m.iter().map(|r| r.to_vec()).collect();
        let cell = make_linear_cell(
            Tensor::matrix(&rows).unwrap(),
            Tensor::vector(vec![1.0, 0.5, -1.0]),
            Some(k),
        )
        .unwrap();
        let x = Tensor::vector(vec![0.0; 3]);
        let cot = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let oracle_cfg = SolverConfig::fixed_steps(256).with_beta(0.5);
        let oracle = unrolled_gradient(&cell, &x, &oracle_cfg, &cot).unwrap();
        let forward = SolverConfig::default()
            .with_beta(0.5)
            .with_tol(1e-14)
            .with_max_steps(10_000);
        let z_star = reversible_forward(&cell, &x, &forward).unwrap().state.z().clone();
        let mut points = Vec::new();
        for steps in 1..=40 {
            let cfg = SolverConfig::fixed_steps(steps).with_beta(1.0);
            let g = ift_gradient(&cell, &x, &z_star, &cot, &cfg).unwrap();
            let err = g.theta_grad[0].sub(&oracle.theta_grad[0]).unwrap().norm(NormKind::L2);
            if err < 1e-9 {
                break;
            }
            points.push((steps as f64, err.ln()));
        }
        if points.len() < 3 {
            return Verdict::new(false, "too few measurable adjoint steps");
        }
        // least-squares slope of log error against m
        let n = points.len() as f64;
        let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let cov: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let var: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        fitted.push((cov / var).exp());
    }
    let ok = fitted.iter().all(|r| (r - k).abs() <= 0.1);
    let shown: Vec<String> = fitted.iter().map(|r| format!("{r:.3}")).collect();
    Verdict::new(
        ok,
        format!("fitted ratios [{}] for k = {k} (tolerance ±0.1)", shown.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 8. NFE trend

fn nfe_trend() -> Verdict {
    let task = TrainTask::default();
    let rows = match nfe_sweep(&task, Engine::Reversible, &[1, 2, 3, 4, 8], &[0, 1, 2]) {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let loss = |n: usize| rows.iter().find(|r| r.n == n).unwrap().final_loss;
    let monotone = [1, 2, 3].iter().all(|&n| loss(n + 1) <= loss(n));
    let change = (loss(8) - loss(4)).abs() / loss(4);
    let nfe_ok = rows.iter().all(|r| r.nfe == 2 * r.n);
    let shown: Vec<String> = rows.iter().map(|r| format!("N{}={:.4}", r.n, r.final_loss)).collect();
    Verdict::new(
        monotone && change < 0.05 && nfe_ok,
        format!(
            "median final loss {}; N4→N8 change {:.1}% (limit 5%)",
            shown.join(" "),
            100.0 * change
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Training-trajectory equivalence

fn trajectory_equivalence() -> Verdict {
    let task = TrainTask {
        steps: 100,
        ..TrainTask::default()
    };
    let rev = train(&task, Engine::Reversible);
    let unrolled = train(&task, Engine::Unrolled);
    match (rev, unrolled) {
        (Ok(a), Ok(b)) => {
            let gap = a.state.model.max_param_diff(&b.state.model).unwrap();
            Verdict::new(
                gap <= 1e-6,
                format!("max parameter difference after 100 steps {gap:.2e} (limit 1e-6)"),
            )
        }
        (Err(e), _) | (_, Err(e)) => Verdict::error(e),
    }
}

// ---------------------------------------------------------------------------
// 10. Determinism of CLI experiments

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_revdeq"))
        .args(args)
        .args(["--out", "out.csv"])
        .current_dir(dir)
        .env_remove("REVDEQ_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() && out.status.code() != Some(2) {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    std::fs::read(dir.join("out.csv")).map_err(|e| format!("{args:?}: {e}"))
}

fn cli_determinism() -> Verdict {
    let runs: [&[&str]; 7] = [
        &["solve", "--cell", "mlp:8:16:0.9", "--seed", "3"],
        &["grad-check", "--cell", "mlp:4:8:0.9", "--steps", "8"],
        &["sweep", "--beta", "0.5:1.3:0.1", "--k", "0.1:0.9:0.2"],
        &["reconstruct", "--steps", "8,16", "--seeds", "0,1"],
        &["grad-bench", "--steps", "1,4,16", "--seeds", "0,1"],
        &["train", "--steps", "150", "--seed", "4"],
        &["nfe", "--n-grid", "1,2", "--seeds", "0,1", "--steps", "60"],
    ];
    let mut mismatched = Vec::new();
    for args in runs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        match (run_cli(a.path(), args), run_cli(b.path(), args)) {
            (Ok(x), Ok(y)) => {
                if x != y || x.is_empty() {
                    mismatched.push(args[0]);
                }
            }
            (Err(e), _) | (_, Err(e)) => return Verdict::error(e),
        }
    }
    Verdict::new(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} subcommands, byte-identical CSV on re-run", runs.len())
        } else {
            format!("differing output: {}", mismatched.join(", "))
        },
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Verdict, Option<u64>);
    let criteria: [Criterion; 10] = [
        ("gradient exactness", gradient_exactness, Some(10)),
        ("finite-difference oracle", finite_difference_oracle, Some(30)),
        ("convergence theorem", convergence_theorem, Some(5)),
        ("fixed-point agreement", fixed_point_agreement, None),
        ("round-trip reconstruction", round_trip, None),
        ("constant memory", constant_memory, None),
        ("IFT approximation gap", ift_gap, None),
        ("NFE trend", nfe_trend, Some(300)),
        ("training-trajectory equivalence", trajectory_equivalence, None),
        ("determinism", cli_determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let verdict = within_budget(verdict, elapsed, budget.map(Duration::from_secs));
        let tag = if verdict.passed { "PASS" } else { "FAIL" };
        println!(
            "{tag} {:>2} {name}: {} [{:.1} s]",
            i + 1,
            verdict.detail,
            elapsed.as_secs_f64()
        );
        failed += usize::from(!verdict.passed);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
