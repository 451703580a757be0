use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::LinearOperator;
use crate::error::Result;
use crate::volume::{dot_slices, Volume};

#[derive(Clone, Debug)]
pub struct PowerIterOptions {
    pub max_iters: usize,
    /// Stop when successive eigenvalue estimates differ by less than
    /// `tol · estimate`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        PowerIterOptions {
            max_iters: 300,
            tol: 1e-6,
            seed: 0x5eed,
        }
    }
}

impl PowerIterOptions {
    /// Tighter settings used when the result normalises an operator.
    pub fn precise() -> Self {
        PowerIterOptions {
            max_iters: 1000,
            tol: 1e-9,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of a symmetric positive semidefinite map given as a
/// closure, by power iteration from a seeded random start.
pub fn power_iteration(
    len: usize,
    mut gram: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    opts: &PowerIterOptions,
) -> Result<NormEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n0 = dot_slices(&x, &x).sqrt();
    x.iter_mut().for_each(|v| *v /= n0);
    let mut lambda = 0.0;
    for it in 1..=opts.max_iters {
        let y = gram(&x)?;
        // Rayleigh quotient with unit x
        let next = dot_slices(&x, &y);
        let ny = dot_slices(&y, &y).sqrt();
        if ny == 0.0 || !ny.is_finite() {
            return Ok(NormEstimate {
                value: 0.0,
                iterations: it,
                converged: ny == 0.0,
            });
        }
        let done = it > 1 && (next - lambda).abs() <= opts.tol * next.abs();
        lambda = next;
        if done {
            return Ok(NormEstimate {
                value: lambda,
                iterations: it,
                converged: true,
            });
        }
        x = y;
        x.iter_mut().for_each(|v| *v /= ny);
    }
    Ok(NormEstimate {
        value: lambda,
        iterations: opts.max_iters,
        converged: false,
    })
}

/// Spectral norm `‖A‖ = sqrt(λ_max(A*A))`.
pub fn estimate_op_norm(op: &dyn LinearOperator, opts: &PowerIterOptions) -> Result<NormEstimate> {
    let dims = op.dims();
    let est = power_iteration(
        dims.len(),
        |x| {
            let v = Volume::from_vec(dims, x.to_vec())?;
            Ok(op.adjoint(&op.apply(&v)?)?.into_vec())
        },
        opts,
    )?;
    Ok(NormEstimate {
        value: est.value.max(0.0).sqrt(),
        ..est
    })
}
