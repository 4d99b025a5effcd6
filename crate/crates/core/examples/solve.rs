//! Find the equilibrium of a contractive cell with each solver.
//!
//! ```text
//! cargo run --example solve
//! ```

use revdeq::cell::{make_mlp_cell, CellSpec, EquilibriumFunction, LinearCell};
use revdeq::solver::{naive_iterate, relaxed_iterate, reversible_forward, SolveState, SolverConfig};
use revdeq::tensor::{PrecisionPolicy, Tensor};

fn main() -> revdeq::Result<()> {
    // f(z) = 0.5 z + 1 has its fixed point at 2
    let scalar = LinearCell::scalar(0.5, 1.0)?;
    let x = Tensor::scalar(0.0);
    let cfg = SolverConfig::default().with_tol(1e-10).with_max_steps(200);

    let naive = naive_iterate(&scalar, &x, &cfg)?;
    let relaxed = relaxed_iterate(&scalar, &x, &cfg)?;
    let coupled = reversible_forward(&scalar, &x, &cfg)?;
    for (name, r) in [("naive", &naive), ("relaxed", &relaxed), ("reversible", &coupled)] {
        println!(
            "{name:<10} z = {:.10}  steps {:>3}  nfe {:>3}  residual {:.1e}",
            r.state.z().data()[0],
            r.steps_taken,
            r.nfe,
            r.residual
        );
    }

    // a tanh MLP cell, solved at three precision policies
    let cell = make_mlp_cell(8, 16, 0.9, 7)?;
    let x = CellSpec::Mlp {
        width: 8,
        hidden: 16,
        k: 0.9,
    }
    .default_input(7);
    println!("\nmlp cell, declared Lipschitz constant {:.3}", cell.lipschitz_bound());
    for policy in [PrecisionPolicy::DOUBLE, PrecisionPolicy::MIXED, PrecisionPolicy::SINGLE] {
        let cfg = SolverConfig::default()
            .with_tol(1e-5)
            .with_max_steps(500)
            .with_precision(policy);
        let r = reversible_forward(&cell, &x, &cfg)?;
        let SolveState::Coupled(s) = &r.state else {
            unreachable!()
        };
        let gap = s.y.max_abs_diff(&s.z)?;
        println!(
            "{:<7} converged {}  steps {:>3}  |y - z| {:.1e}",
            policy.label(),
            r.converged,
            r.steps_taken,
            gap
        );
    }
    Ok(())
}
