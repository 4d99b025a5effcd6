use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spectral::spectral_norm;
use super::EquilibriumFunction;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Precision, Tensor};

const BIAS_STD: f64 = 0.1;

/// Two-layer tanh cell with the input injected after the first layer:
/// `f(z, x) = W₂ tanh(W₁ z + b₁ + x) + b₂`.
///
/// `z` has `width` coordinates and `x` has `hidden`. Since tanh is
/// 1-Lipschitz, `‖W₁‖·‖W₂‖` bounds the Lipschitz constant in `z`.
#[derive(Debug, Clone)]
pub struct MlpCell {
    params: Vec<Tensor>,
    k: f64,
}

/// Deterministic construction from `seed`. Both weight matrices are scaled
/// to spectral norm `√target_k`, so their product is at most `target_k`.
pub fn make_mlp_cell(width: usize, hidden: usize, target_k: f64, seed: u64) -> Result<MlpCell> {
    if width == 0 || hidden == 0 {
        return Err(Error::config("width/hidden", "layer sizes must be positive"));
    }
    if !(target_k > 0.0 && target_k < 1.0) {
        return Err(Error::config("target_k", format!("must lie in (0, 1), got {target_k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, std: f64| -> Vec<f64> {
        let normal = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    };
    let w1 = Tensor::new(
        vec![hidden, width],
        draw(hidden * width, (1.0 / width as f64).sqrt()),
        Precision::Double,
    )?;
    let b1 = Tensor::vector(draw(hidden, BIAS_STD));
    let w2 = Tensor::new(
        vec![width, hidden],
        draw(width * hidden, (1.0 / hidden as f64).sqrt()),
        Precision::Double,
    )?;
    let b2 = Tensor::vector(draw(width, BIAS_STD));

    let per_layer = target_k.sqrt();
    let w1 = rescale_to(&w1, per_layer)?;
    let w2 = rescale_to(&w2, per_layer)?;
    MlpCell::from_params(vec![w1, b1, w2, b2])
}

fn rescale_to(w: &Tensor, norm: f64) -> Result<Tensor> {
    let sigma = spectral_norm(w)?;
    Ok(if sigma > 0.0 { w.scale(norm / sigma) } else { w.clone() })
}

impl MlpCell {
    fn from_params(params: Vec<Tensor>) -> Result<Self> {
        let [w1, b1, w2, b2] = params.as_slice() else {
            return Err(Error::InvalidTensor("mlp cell takes exactly [W1, b1, W2, b2]".into()));
        };
        let (hidden, width) = w1.matrix_dims("mlp W1")?;
        let (w2_rows, w2_cols) = w2.matrix_dims("mlp W2")?;
        if (w2_rows, w2_cols) != (width, hidden) || b1.shape() != [hidden] || b2.shape() != [width] {
            return Err(Error::ShapeMismatch {
                op: "mlp cell parameters",
                lhs: w1.shape().to_vec(),
                rhs: w2.shape().to_vec(),
            });
        }
        let k = spectral_norm(w1)? * spectral_norm(w2)?;
        Ok(Self { params, k })
    }

    pub fn width(&self) -> usize {
        self.params[3].len()
    }

    pub fn hidden(&self) -> usize {
        self.params[1].len()
    }

    /// Per-layer spectral norms `(‖W₁‖, ‖W₂‖)`.
    pub fn layer_norms(&self) -> Result<(f64, f64)> {
        Ok((spectral_norm(&self.params[0])?, spectral_norm(&self.params[2])?))
    }

    /// Shrink any weight matrix whose spectral norm exceeds `√max_k` back to
    /// `√max_k`, keeping the cell `max_k`-contractive.
    pub fn clip_lipschitz(&self, max_k: f64) -> Result<Self> {
        let per_layer = max_k.sqrt();
        let mut params = self.params.clone();
        for idx in [0, 2] {
            let sigma = spectral_norm(&params[idx])?;
            if sigma > per_layer {
                params[idx] = params[idx].scale(per_layer / sigma);
            }
        }
        Self::from_params(params)
    }
}

impl EquilibriumFunction for MlpCell {
    fn state_dim(&self) -> usize {
        self.width()
    }

    fn input_dim(&self) -> usize {
        self.hidden()
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["W1", "b1", "W2", "b2"]
    }

    fn lipschitz_bound(&self) -> f64 {
        self.k
    }

    fn apply<G: Graph>(&self, g: &mut G, z: &G::Value, x: &G::Value, params: &[G::Value]) -> Result<G::Value> {
        let h = g.matvec(&params[0], z)?;
        let h = g.add(&h, &params[1])?;
        let h = g.add(&h, x)?;
        let a = g.activation(&h, Activation::Tanh)?;
        let o = g.matvec(&params[2], &a)?;
        g.add(&o, &params[3])
    }

    fn with_params(&self, params: Vec<Tensor>) -> Result<Self> {
        Self::from_params(params)
    }
}
