//! Invert the coupled iteration step by step and watch the reconstruction
//! error grow with N and β, for each precision policy.
//!
//! ```text
//! cargo run --example reconstruct
//! ```

use revdeq::cell::make_mlp_cell;
use revdeq::lab::roundtrip_error;
use revdeq::solver::{reversible_backward_step, reversible_forward_step, ReversibleState};
use revdeq::tensor::{NormKind, PrecisionPolicy, Tensor};

fn main() -> revdeq::Result<()> {
    let cell = make_mlp_cell(8, 16, 0.9, 0)?;
    let x = Tensor::vector((0..16).map(|i| (i as f64 * 0.4).sin()).collect());

    // one step forward and back
    let start = ReversibleState::initial(8, PrecisionPolicy::DOUBLE);
    let next = reversible_forward_step(&cell, &x, &start, 0.8, PrecisionPolicy::DOUBLE)?;
    let back = reversible_backward_step(&cell, &x, &next, 0.8, PrecisionPolicy::DOUBLE)?;
    println!(
        "one step: |y0| = {:.1e}, |z0| = {:.1e}\n",
        back.y.norm(NormKind::Max),
        back.z.norm(NormKind::Max)
    );

    println!(
        "{:<7} {:>5} {:>10} {:>10} {:>10}",
        "policy", "beta", "N=8", "N=16", "N=32"
    );
    for policy in [PrecisionPolicy::DOUBLE, PrecisionPolicy::MIXED, PrecisionPolicy::SINGLE] {
        for beta in [0.5, 0.8, 0.9] {
            let errs = [8, 16, 32]
                .iter()
                .map(|&n| roundtrip_error(&cell, &x, n, beta, policy))
                .collect::<revdeq::Result<Vec<_>>>()?;
            println!(
                "{:<7} {:>5} {:>10.1e} {:>10.1e} {:>10.1e}",
                policy.label(),
                beta,
                errs[0],
                errs[1],
                errs[2]
            );
        }
    }
    Ok(())
}
