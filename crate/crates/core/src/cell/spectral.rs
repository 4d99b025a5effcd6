//! Spectral norm by power iteration on `MᵀM`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

pub const POWER_ITERATIONS: usize = 100;
pub const POWER_TOLERANCE: f64 = 1e-10;

/// Largest singular value of a matrix.
pub fn spectral_norm(m: &Tensor) -> Result<f64> {
    spectral_norm_with(m, POWER_ITERATIONS, POWER_TOLERANCE)
}

/// Power iteration with an explicit budget. Stops early once the estimate
/// changes by less than `tol` relative between iterations.
pub fn spectral_norm_with(m: &Tensor, iterations: usize, tol: f64) -> Result<f64> {
    let (rows, cols) = m.matrix_dims("spectral_norm")?;
    let data = m.data();
    if rows == 0 || cols == 0 || data.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    // Fixed start vector: random directions avoid being orthogonal to the
    // leading singular vector for structured matrices.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.5..1.5)).collect();
    normalize(&mut v);

    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..iterations {
        for (ui, row) in u.iter_mut().zip(data.chunks_exact(cols)) {
            *ui = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let mut w = vec![0.0; cols];
        for (row, &ui) in data.chunks_exact(cols).zip(&u) {
            for (wj, a) in w.iter_mut().zip(row) {
                *wj += a * ui;
            }
        }
        let next = normalize(&mut w).sqrt();
        v = w;
        let converged = (next - sigma).abs() <= tol * next;
        sigma = next;
        if converged {
            break;
        }
    }
    Ok(sigma)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}
