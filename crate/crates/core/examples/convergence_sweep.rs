//! Measure the contraction rate of the coupled scheme over a (k, β) grid and
//! compare it with `|1 − β| + βk`. Writes `sweep.csv`.
//!
//! ```text
//! cargo run --example convergence_sweep [-- out.csv]
//! ```

use std::path::PathBuf;

use revdeq::lab::{convergence_sweep, grid, resolve_output, write_csv, ExperimentKind, ExperimentSpec};

fn main() -> revdeq::Result<()> {
    let spec = ExperimentSpec {
        betas: grid(0.2, 1.6, 0.2),
        ks: vec![0.1, 0.5, 0.9],
        ..ExperimentSpec::new(ExperimentKind::Sweep)
    };
    let rows = convergence_sweep(&spec)?;

    println!(
        "{:>4} {:>5} {:>6} {:>8} {:>8} {:>6}",
        "k", "beta", "bound", "L", "L meas", "steps"
    );
    for r in &rows {
        let measured = r.l_measured.map_or("-".to_string(), |l| format!("{l:.4}"));
        let steps = r.steps_to_tol.map_or("-".to_string(), |n| n.to_string());
        let flag = if r.beta >= r.beta_bound { "  outside bound" } else { "" };
        println!(
            "{:>4} {:>5} {:>6.3} {:>8.4} {:>8} {:>6}{flag}",
            r.k, r.beta, r.beta_bound, r.l_predicted, measured, steps
        );
    }

    let out = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("sweep.csv"), PathBuf::from);
    let path = resolve_output(&out);
    write_csv(&path, &rows)?;
    println!("\nwrote {}", path.display());
    Ok(())
}
