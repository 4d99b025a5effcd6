//! How close each engine gets to a long-horizon gradient, and at what cost.
//!
//! ```text
//! cargo run --release --example gradient_bench
//! ```

use revdeq::lab::{gradient_accuracy_bench, ExperimentKind, ExperimentSpec, ORACLE_STEPS};

fn main() -> revdeq::Result<()> {
    let spec = ExperimentSpec {
        ks: vec![0.5, 0.9],
        steps: vec![1, 2, 4, 8, 16, 32],
        seeds: vec![0, 1, 2],
        ..ExperimentSpec::new(ExperimentKind::GradBench)
    };
    let rows = gradient_accuracy_bench(&spec)?;
    println!("oracle: unrolled gradient at N = {ORACLE_STEPS}\n");
    println!(
        "{:>4} {:<10} {:>5} {:>12} {:>14} {:>8}",
        "k", "engine", "steps", "vs oracle", "vs same-N", "nfe"
    );
    for r in &rows {
        let same_n = r
            .coord_rel_error_vs_unrolled_same_n
            .map_or("-".into(), |e| format!("{e:.1e}"));
        println!(
            "{:>4} {:<10} {:>5} {:>12.2e} {:>14} {:>8}",
            r.k,
            r.engine,
            r.steps,
            r.rel_error_vs_oracle,
            same_n,
            r.nfe_forward + r.nfe_backward
        );
    }
    Ok(())
}
