use nalgebra::{DMatrix, DVector};

use super::spectral::spectral_norm;
use super::EquilibriumFunction;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine cell `f(z, x) = A z + b + x`.
#[derive(Debug, Clone)]
pub struct LinearCell {
    params: Vec<Tensor>,
    k: f64,
}

/// Build a linear cell. With `target_k`, `A` is rescaled so that its
/// spectral norm equals `target_k`; the declared constant is always the
/// spectral norm of the stored `A`.
pub fn make_linear_cell(a: Tensor, b: Tensor, target_k: Option<f64>) -> Result<LinearCell> {
    let (rows, cols) = a.matrix_dims("make_linear_cell")?;
    if rows != cols {
        return Err(Error::ShapeMismatch {
            op: "make_linear_cell (A must be square)",
            lhs: a.shape().to_vec(),
            rhs: vec![cols, rows],
        });
    }
    if b.shape() != [rows] {
        return Err(Error::ShapeMismatch {
            op: "make_linear_cell (b must match A)",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let a = match target_k {
        None => a,
        Some(k) => {
            if !(k > 0.0 && k < 1.0) {
                return Err(Error::config("target_k", format!("must lie in (0, 1), got {k}")));
            }
            let sigma = spectral_norm(&a)?;
            if sigma == 0.0 {
                a
            } else {
                a.scale(k / sigma)
            }
        }
    };
    let k = spectral_norm(&a)?;
    Ok(LinearCell { params: vec![a, b], k })
}

impl LinearCell {
    /// One-dimensional cell `f(z, x) = a z + b + x`.
    pub fn scalar(a: f64, b: f64) -> Result<Self> {
        make_linear_cell(Tensor::matrix(&[vec![a]])?, Tensor::vector(vec![b]), None)
    }

    pub fn a(&self) -> &Tensor {
        &self.params[0]
    }

    pub fn b(&self) -> &Tensor {
        &self.params[1]
    }

    /// Solve `(I − A) q = b + x` directly.
    pub fn analytic_fixed_point(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.state_dim();
        let a = DMatrix::from_row_slice(n, n, self.a().data());
        let lhs = DMatrix::identity(n, n) - a;
        let rhs = DVector::from_iterator(n, self.b().data().iter().zip(x.data()).map(|(b, x)| b + x));
        let q = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Domain("I − A is singular; no unique fixed point".into()))?;
        Ok(Tensor::vector(q.iter().copied().collect()))
    }
}

impl EquilibriumFunction for LinearCell {
    fn state_dim(&self) -> usize {
        self.params[1].len()
    }

    fn input_dim(&self) -> usize {
        self.state_dim()
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["A", "b"]
    }

    fn lipschitz_bound(&self) -> f64 {
        self.k
    }

    fn apply<G: Graph>(&self, g: &mut G, z: &G::Value, x: &G::Value, params: &[G::Value]) -> Result<G::Value> {
        let az = g.matvec(&params[0], z)?;
        let azb = g.add(&az, &params[1])?;
        g.add(&azb, x)
    }

    fn with_params(&self, params: Vec<Tensor>) -> Result<Self> {
        let mut it = params.into_iter();
        match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => make_linear_cell(a, b, None),
            _ => Err(Error::InvalidTensor("linear cell takes exactly [A, b]".into())),
        }
    }
}
