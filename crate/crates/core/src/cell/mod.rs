//! Contractive equilibrium functions `f_θ(z, x)`.

mod linear;
mod mlp;
pub mod spectral;

use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Eager, Graph, Tape};
use crate::error::{Error, Result};
use crate::tensor::{NormKind, Precision, Tensor};

pub use linear::{make_linear_cell, LinearCell};
pub use mlp::{make_mlp_cell, MlpCell};

/// A parameterised map `f_θ(z, x)` whose output has the shape of `z`.
///
/// Implementors describe the computation once in [`apply`](Self::apply);
/// evaluation and vector-Jacobian products are derived from it.
pub trait EquilibriumFunction {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Parameter tensors θ, in a fixed order.
    fn params(&self) -> &[Tensor];

    fn param_names(&self) -> &'static [&'static str];

    /// Declared Lipschitz constant in `z` (l2 norm).
    fn lipschitz_bound(&self) -> f64;

    fn apply<G: Graph>(&self, g: &mut G, z: &G::Value, x: &G::Value, params: &[G::Value]) -> Result<G::Value>;

    /// Same function with different parameter values.
    fn with_params(&self, params: Vec<Tensor>) -> Result<Self>
    where
        Self: Sized;

    fn eval(&self, z: &Tensor, x: &Tensor) -> Result<Tensor> {
        self.eval_at(z, x, z.precision())
    }

    /// Evaluate with inputs and parameters rounded to `precision`.
    fn eval_at(&self, z: &Tensor, x: &Tensor, precision: Precision) -> Result<Tensor> {
        let z = z.cast(precision);
        let x = x.cast(precision);
        if self.params().iter().all(|p| p.precision() == precision) {
            self.apply(&mut Eager, &z, &x, self.params())
        } else {
            let params: Vec<Tensor> = self.params().iter().map(|p| p.cast(precision)).collect();
            self.apply(&mut Eager, &z, &x, &params)
        }
    }

    /// Vector-Jacobian products at `(z, x)`, evaluated at `z`'s precision.
    fn vjp(&self, z: &Tensor, x: &Tensor, cotangent: &Tensor) -> Result<CellVjp> {
        self.vjp_at(z, x, cotangent, z.precision())
    }

    /// Records `f` on a fresh tape at `precision` and pulls `cotangent` back
    /// to `z`, `x` and θ. Cotangents come back at the precision of the
    /// corresponding inputs.
    fn vjp_at(&self, z: &Tensor, x: &Tensor, cotangent: &Tensor, precision: Precision) -> Result<CellVjp> {
        let mut tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let xv = tape.leaf(x.clone());
        let pv: Vec<_> = self.params().iter().map(|p| tape.leaf(p.clone())).collect();
        let zc = tape.cast(&zv, precision)?;
        let xc = tape.cast(&xv, precision)?;
        let pc = pv.iter().map(|p| tape.cast(p, precision)).collect::<Result<Vec<_>>>()?;
        let out = self.apply(&mut tape, &zc, &xc, &pc)?;
        let mut grads = tape.vjp(out, cotangent)?;
        let value = tape.value(out)?.clone();
        let tape_len = tape.len();
        let take = |g: &mut crate::autodiff::Cotangents, v| g.take(v).ok_or(Error::UnknownVar(v.index()));
        Ok(CellVjp {
            value,
            z: take(&mut grads, zv)?,
            x: take(&mut grads, xv)?,
            theta: pv.into_iter().map(|p| take(&mut grads, p)).collect::<Result<_>>()?,
            tape_len,
        })
    }
}

/// Output of [`EquilibriumFunction::vjp`].
#[derive(Debug, Clone)]
pub struct CellVjp {
    /// `f(z, x)` at the evaluation precision.
    pub value: Tensor,
    pub z: Tensor,
    pub x: Tensor,
    pub theta: Vec<Tensor>,
    /// Tensors held by the local tape while the VJP was computed.
    pub tape_len: usize,
}

/// Empirical lower bound on the Lipschitz constant in `z`:
/// `max ‖f(z) − f(z')‖ / ‖z − z'‖` over sampled pairs sharing one `x`.
pub fn estimate_lipschitz<F: EquilibriumFunction>(f: &F, num_pairs: usize, seed: u64) -> Result<f64> {
    if num_pairs == 0 {
        return Err(Error::config("num_pairs", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = f.state_dim();
    let mut best = 0.0f64;
    for _ in 0..num_pairs {
        let x = Tensor::vector((0..f.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // mix near and far pairs: local slopes and global behaviour
        let (z2, dist) = loop {
            let radius = 10f64.powf(rng.gen_range(-3.0..0.5));
            let z2: Vec<f64> = z.iter().map(|v| v + radius * rng.gen_range(-1.0..1.0)).collect();
            let dist = z.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist > 0.0 {
                break (z2, dist);
            }
        };
        let fa = f.eval(&Tensor::vector(z), &x)?;
        let fb = f.eval(&Tensor::vector(z2), &x)?;
        let ratio = fa.sub(&fb)?.norm(NormKind::L2) / dist;
        best = best.max(ratio);
    }
    Ok(best)
}

/// Either cell, for code that picks the cell at runtime.
#[derive(Debug, Clone)]
pub enum AnyCell {
    Linear(LinearCell),
    Mlp(MlpCell),
}

impl EquilibriumFunction for AnyCell {
    fn state_dim(&self) -> usize {
        match self {
            AnyCell::Linear(c) => c.state_dim(),
            AnyCell::Mlp(c) => c.state_dim(),
        }
    }
    fn input_dim(&self) -> usize {
        match self {
            AnyCell::Linear(c) => c.input_dim(),
            AnyCell::Mlp(c) => c.input_dim(),
        }
    }
    fn params(&self) -> &[Tensor] {
        match self {
            AnyCell::Linear(c) => c.params(),
            AnyCell::Mlp(c) => c.params(),
        }
    }
    fn param_names(&self) -> &'static [&'static str] {
        match self {
            AnyCell::Linear(c) => c.param_names(),
            AnyCell::Mlp(c) => c.param_names(),
        }
    }
    fn lipschitz_bound(&self) -> f64 {
        match self {
            AnyCell::Linear(c) => c.lipschitz_bound(),
            AnyCell::Mlp(c) => c.lipschitz_bound(),
        }
    }
    fn apply<G: Graph>(&self, g: &mut G, z: &G::Value, x: &G::Value, params: &[G::Value]) -> Result<G::Value> {
        match self {
            AnyCell::Linear(c) => c.apply(g, z, x, params),
            AnyCell::Mlp(c) => c.apply(g, z, x, params),
        }
    }
    fn with_params(&self, params: Vec<Tensor>) -> Result<Self> {
        Ok(match self {
            AnyCell::Linear(c) => AnyCell::Linear(c.with_params(params)?),
            AnyCell::Mlp(c) => AnyCell::Mlp(c.with_params(params)?),
        })
    }
}

/// Textual cell description: `linear:<a>` is the scalar cell `f(z) = a z + 1 + x`,
/// `mlp:<width>:<hidden>:<k>` a spectrally scaled tanh MLP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellSpec {
    Linear { a: f64 },
    Mlp { width: usize, hidden: usize, k: f64 },
}

impl CellSpec {
    pub fn build(&self, seed: u64) -> Result<AnyCell> {
        Ok(match *self {
            CellSpec::Linear { a } => AnyCell::Linear(LinearCell::scalar(a, 1.0)?),
            CellSpec::Mlp { width, hidden, k } => AnyCell::Mlp(make_mlp_cell(width, hidden, k, seed)?),
        })
    }

    /// Deterministic input `x` for a cell built from this spec: zeros for
    /// linear cells, standard normal draws for MLP cells.
    pub fn default_input(&self, seed: u64) -> Tensor {
        match *self {
            CellSpec::Linear { .. } => Tensor::vector(vec![0.0]),
            CellSpec::Mlp { hidden, .. } => {
                use rand_distr::{Distribution, StandardNormal};
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234_5678);
                Tensor::vector((0..hidden).map(|_| StandardNormal.sample(&mut rng)).collect())
            }
        }
    }
}

impl FromStr for CellSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::config("cell", format!("`{s}`: {why}"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["linear", a] => Ok(CellSpec::Linear {
                a: a.parse().map_err(|_| bad("slope is not a number"))?,
            }),
            ["mlp", w, h, k] => Ok(CellSpec::Mlp {
                width: w.parse().map_err(|_| bad("width is not an integer"))?,
                hidden: h.parse().map_err(|_| bad("hidden is not an integer"))?,
                k: k.parse().map_err(|_| bad("k is not a number"))?,
            }),
            _ => Err(bad("expected `linear:<a>` or `mlp:<width>:<hidden>:<k>`")),
        }
    }
}

impl std::fmt::Display for CellSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellSpec::Linear { a } => write!(f, "linear:{a}"),
            CellSpec::Mlp { width, hidden, k } => write!(f, "mlp:{width}:{hidden}:{k}"),
        }
    }
}
