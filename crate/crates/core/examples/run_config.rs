//! Drive experiments from a TOML run configuration, as the `revdeq` binary
//! does with `--config`.
//!
//! ```text
//! cargo run --example run_config
//! ```

use revdeq::config::RunConfig;
use revdeq::lab::{reconstruction_bench, ExperimentKind};
use revdeq::solver::reversible_forward;

const CONFIG: &str = r#"
seed = 1
cell = "mlp:8:16:0.7"

[solver]
beta = 0.7
tol = 1e-8
max_steps = 200

[experiment]
betas = "0.5:0.9:0.2"
steps = [8, 16]
policies = ["double", "mixed"]
seeds = [0, 1]
"#;

fn main() -> revdeq::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG)?;
    cfg.validate()?;

    let spec = cfg.cell_spec()?;
    let cell = spec.build(cfg.seed)?;
    let result = reversible_forward(&cell, &spec.default_input(cfg.seed), &cfg.solver_config()?)?;
    println!("{spec}: converged {} in {} steps", result.converged, result.steps_taken);

    let rows = reconstruction_bench(&cfg.experiment_spec(ExperimentKind::Reconstruct)?)?;
    for r in rows {
        println!(
            "{:<6} beta {:.1}  N {:>2}  round trip {:.1e}",
            r.policy, r.beta, r.n, r.max_roundtrip_error
        );
    }

    // typos are rejected with the offending key
    match RunConfig::from_toml("[solver]\nbetta = 0.5\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
