//! Plug a user-defined cell into the solvers and gradient engines.
//!
//! A cell only describes its computation once, generically over the graph;
//! evaluation, VJPs and the reversible engine follow from that.
//!
//! ```text
//! cargo run --example custom_cell
//! ```

use revdeq::autodiff::Graph;
use revdeq::cell::{estimate_lipschitz, EquilibriumFunction};
use revdeq::grad::{relative_error, solve_and_differentiate, Engine};
use revdeq::solver::{reversible_forward, SolverConfig};
use revdeq::tensor::{Activation, Tensor};

/// `f(z, x) = tanh(W z + x)` with a fixed damping `c` folded into W.
#[derive(Clone, Debug)]
struct TanhCell {
    params: Vec<Tensor>,
    k: f64,
}

impl TanhCell {
    fn new(w: Vec<Vec<f64>>) -> revdeq::Result<Self> {
        let w = Tensor::matrix(&w)?;
        let k = revdeq::cell::spectral::spectral_norm(&w)?;
        Ok(Self { params: vec![w], k })
    }
}

impl EquilibriumFunction for TanhCell {
    fn state_dim(&self) -> usize {
        self.params[0].shape()[0]
    }

    fn input_dim(&self) -> usize {
        self.state_dim()
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["W"]
    }

    fn lipschitz_bound(&self) -> f64 {
        self.k
    }

    fn apply<G: Graph>(&self, g: &mut G, z: &G::Value, x: &G::Value, params: &[G::Value]) -> revdeq::Result<G::Value> {
        let h = g.matvec(&params[0], z)?;
        let h = g.add(&h, x)?;
        g.activation(&h, Activation::Tanh)
    }

    fn with_params(&self, mut params: Vec<Tensor>) -> revdeq::Result<Self> {
        let w = params.remove(0);
        let k = revdeq::cell::spectral::spectral_norm(&w)?;
        Ok(Self { params: vec![w], k })
    }
}

fn main() -> revdeq::Result<()> {
    let cell = TanhCell::new(vec![vec![0.3, -0.4, 0.1], vec![0.2, 0.5, 0.0], vec![-0.1, 0.2, 0.4]])?;
    println!(
        "declared k {:.3}, sampled lower bound {:.3}",
        cell.lipschitz_bound(),
        estimate_lipschitz(&cell, 2000, 0)?
    );

    let x = Tensor::vector(vec![0.5, -1.0, 0.25]);
    let cfg = SolverConfig::default()
        .with_beta(0.5)
        .with_tol(1e-10)
        .with_max_steps(300);
    let r = reversible_forward(&cell, &x, &cfg)?;
    println!("z* = {:?} after {} steps", r.state.z().data(), r.steps_taken);

    let c = Tensor::vector(vec![1.0, 1.0, 1.0]);
    // inverting each step amplifies rounding, so differentiate a short horizon
    let fixed = SolverConfig::fixed_steps(12).with_beta(cfg.beta);
    let rev = solve_and_differentiate(Engine::Reversible, &cell, &x, &fixed, &c)?;
    let unrolled = solve_and_differentiate(Engine::Unrolled, &cell, &x, &fixed, &c)?;
    println!("dL/dW (reversible) = {:?}", rev.theta_grad[0].data());
    println!(
        "reconstructed start off by {:.1e}",
        rev.reconstruction_error.unwrap_or(f64::NAN)
    );
    println!(
        "relative error against the stored graph {:.1e}",
        relative_error(&rev.theta_grad[0], &unrolled.theta_grad[0])?
    );
    Ok(())
}
