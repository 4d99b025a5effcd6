//! Central finite differences, the independent oracle for gradient checks.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradient of a scalar function by central differences,
/// `(f(p + ε eᵢ) − f(p − ε eᵢ)) / 2ε` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut func: F, params: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("eps", format!("must be positive and finite, got {eps}")));
    }
    let base = params.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe[i] = base[i] + eps;
        let plus = func(&params.with_data(probe.clone()))?;
        probe[i] = base[i] - eps;
        let minus = func(&params.with_data(probe))?;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteObjective { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(params.with_data(grad))
}
