//! Gradient engines for the equilibrium layer.
//!
//! All engines take the loss cotangent `∂L/∂z_N` and return gradients with
//! respect to the cell parameters θ and the input `x`.

mod check;
mod implicit;
mod reversible;
mod unrolled;

use serde::{Deserialize, Serialize};

pub use check::{grad_check, relative_error, GradCheckReport, ParamDiscrepancy, REL_ERROR_FLOOR};
pub use implicit::{ift_gradient, jfb_gradient};
pub use reversible::{reversible_backprop, reversible_backprop_from};
pub use unrolled::unrolled_gradient;

use crate::cell::EquilibriumFunction;
use crate::error::{Error, Result};
use crate::solver::{reversible_forward, SolverConfig};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Exact backpropagation through the reconstructed reversible iterates.
    Reversible,
    /// Implicit-function adjoint at the approximate fixed point.
    Ift,
    /// Reverse-mode AD over the stored forward graph.
    Unrolled,
    /// Jacobian-free baseline: the adjoint is the loss cotangent itself.
    Jfb,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Reversible, Engine::Ift, Engine::Unrolled, Engine::Jfb];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Reversible => "reversible",
            Engine::Ift => "ift",
            Engine::Unrolled => "unrolled",
            Engine::Jfb => "jfb",
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Engine::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            Error::config(
                "engine",
                format!("unknown engine `{s}` (reversible, ift, unrolled, jfb)"),
            )
        })
    }
}

/// Adjoint state carried backwards through the reversible iterates.
#[derive(Debug, Clone)]
pub struct Adjoints {
    pub y_bar: Tensor,
    pub z_bar: Tensor,
    pub theta_bar: Vec<Tensor>,
}

impl Adjoints {
    /// Backward initialisation: `z̄ = ∂L/∂z_N`, `ȳ = 0`, `θ̄ = 0`.
    pub fn terminal<F: EquilibriumFunction>(f: &F, loss_cotangent: &Tensor, precision: Precision) -> Self {
        let z_bar = loss_cotangent.cast(precision);
        Self {
            y_bar: Tensor::zeros_like(&z_bar),
            z_bar,
            theta_bar: f.params().iter().map(Tensor::zeros_like).collect(),
        }
    }

    /// Also attach a loss cotangent to `y_N`.
    pub fn with_y_bar(mut self, y_bar: &Tensor) -> Self {
        self.y_bar = y_bar.cast(self.z_bar.precision());
        self
    }
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    /// `∂L/∂θ`, one tensor per cell parameter.
    pub theta_grad: Vec<Tensor>,
    pub x_grad: Option<Tensor>,
    pub engine: Engine,
    pub nfe_forward: usize,
    /// Evaluations of `f` (each vector-Jacobian product evaluates `f` once).
    pub nfe_backward: usize,
    /// Largest number of tensors held at once by the engine.
    pub peak_stored_tensors: usize,
    /// Reversible engine only: max-norm distance of the reconstructed
    /// `(y₀, z₀)` from zero.
    pub reconstruction_error: Option<f64>,
}

/// Solve forward with the reversible scheme, then differentiate with
/// `engine`. The fixed-point engines use `config` for their adjoint solve.
pub fn solve_and_differentiate<F: EquilibriumFunction>(
    engine: Engine,
    f: &F,
    x: &Tensor,
    config: &SolverConfig,
    loss_cotangent: &Tensor,
) -> Result<GradientReport> {
    if engine == Engine::Unrolled {
        return unrolled_gradient(f, x, config, loss_cotangent);
    }
    let forward = reversible_forward(f, x, config)?;
    let mut report = match engine {
        Engine::Reversible => reversible_backprop(f, x, &forward, loss_cotangent, config)?,
        Engine::Ift => ift_gradient(f, x, forward.state.z(), loss_cotangent, config)?,
        Engine::Jfb => jfb_gradient(f, x, forward.state.z(), loss_cotangent)?,
        Engine::Unrolled => unreachable!(),
    };
    report.nfe_forward = forward.nfe;
    Ok(report)
}

pub(crate) fn check_cotangent<F: EquilibriumFunction>(f: &F, cotangent: &Tensor) -> Result<()> {
    if cotangent.shape() != [f.state_dim()] {
        return Err(Error::ShapeMismatch {
            op: "loss cotangent",
            lhs: vec![f.state_dim()],
            rhs: cotangent.shape().to_vec(),
        });
    }
    Ok(())
}
