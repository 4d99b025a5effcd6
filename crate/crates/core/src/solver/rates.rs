//! Contraction rates of the relaxed and coupled iterations.

use crate::error::{Error, Result};

fn check_k(k: f64) -> Result<()> {
    if !(0.0..1.0).contains(&k) {
        return Err(Error::Domain(format!("Lipschitz constant must lie in [0, 1), got {k}")));
    }
    Ok(())
}

/// Rate of one relaxed step for a `k`-Lipschitz map: `|1 − β| + β k`.
pub fn rate_constant(beta: f64, k: f64) -> Result<f64> {
    check_k(k)?;
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    Ok((1.0 - beta).abs() + beta * k)
}

/// Largest β for which [`rate_constant`] stays below one: `2 / (k + 1)`.
pub fn beta_upper_bound(k: f64) -> Result<f64> {
    check_k(k)?;
    Ok(2.0 / (k + 1.0))
}

/// Sharper per-step bound for the coupled scheme, where the second update
/// sees the already-updated `y`: `|1 − β| + β k |1 − β| + β² k²`.
pub fn coupled_rate_bound(beta: f64, k: f64) -> Result<f64> {
    let l = rate_constant(beta, k)?;
    let c = (1.0 - beta).abs();
    debug_assert!(l >= c);
    Ok(c + beta * k * c + beta * beta * k * k)
}

/// Asymptotic rate of the coupled scheme for the scalar map `f(z) = a z + b`:
/// the spectral radius of its 2×2 iteration matrix.
pub fn diagonal_coupled_rate(beta: f64, a: f64) -> f64 {
    let c = 1.0 - beta;
    // [y', z'] = M [y, z] with M = [[c, βa], [βa c, c + β² a²]]
    let (m00, m01, m10, m11) = (c, beta * a, beta * a * c, c + beta * beta * a * a);
    let tr = m00 + m11;
    let det = m00 * m11 - m01 * m10;
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
    } else {
        det.abs().sqrt()
    }
}
