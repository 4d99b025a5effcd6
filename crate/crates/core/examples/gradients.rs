//! Differentiate through an equilibrium with every engine and check the
//! results against finite differences.
//!
//! ```text
//! cargo run --example gradients
//! ```

use revdeq::cell::make_mlp_cell;
use revdeq::grad::{grad_check, relative_error, solve_and_differentiate, Engine};
use revdeq::solver::SolverConfig;
use revdeq::tensor::Tensor;

fn main() -> revdeq::Result<()> {
    let cell = make_mlp_cell(8, 16, 0.8, 3)?;
    let x = Tensor::vector((0..16).map(|i| (i as f64 * 0.3).cos()).collect());
    // L = c · z_N
    let c = Tensor::vector((0..8).map(|i| 1.0 - 0.1 * i as f64).collect());
    let cfg = SolverConfig::fixed_steps(12).with_beta(0.8);

    let oracle = solve_and_differentiate(Engine::Unrolled, &cell, &x, &cfg, &c)?;
    println!(
        "{:<10} {:>12} {:>8} {:>8} {:>8}",
        "engine", "rel. error", "nfe fwd", "nfe bwd", "stored"
    );
    for engine in Engine::ALL {
        let r = solve_and_differentiate(engine, &cell, &x, &cfg, &c)?;
        let err = r
            .theta_grad
            .iter()
            .zip(&oracle.theta_grad)
            .map(|(a, b)| relative_error(a, b))
            .collect::<revdeq::Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        println!(
            "{:<10} {:>12.2e} {:>8} {:>8} {:>8}",
            engine.name(),
            err,
            r.nfe_forward,
            r.nfe_backward,
            r.peak_stored_tensors
        );
    }

    println!("\nreversible engine against central differences:");
    let report = grad_check(&cell, &x, &cfg, Engine::Reversible, &c, 1e-5)?;
    for e in &report.entries {
        println!("  {:<3} max abs {:.2e}  max rel {:.2e}", e.name, e.max_abs, e.max_rel);
    }
    Ok(())
}
