//! Slow, literal reference implementations for checking `lsdeconv`.
//!
//! Only the volume type is borrowed from the library; every formula here is
//! written out again from its definition, in plain loops, single threaded.

use lsdeconv::{Dims, Volume};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub mod fixtures;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("size guard: {0}")]
    TooLarge(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Largest grid accepted by [`naive_apply_lightsheet`].
pub const NAIVE_MAX_DIMS: [usize; 3] = [16, 16, 8];
/// Largest voxel count accepted by [`dense_materialize`].
pub const DENSE_MAX_LEN: usize = 4096;

fn same_dims(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(OracleError::Invalid(format!(
            "dimension mismatch {:?} vs {:?}",
            a.dims().as_array(),
            b.dims().as_array()
        )));
    }
    Ok(())
}

/// Light-sheet image by the defining triple sum, samples outside the grid
/// being zero:
///
/// `f[i,j,k] = (1/c) Σ l[p,q,r] · u[p,q,k−r+nz/2] · h[i−p+nx/2, j−q+ny/2, r]`.
pub fn naive_apply_lightsheet(l: &Volume, h: &Volume, u: &Volume, c: f64) -> Result<Volume> {
    same_dims(l, h)?;
    same_dims(l, u)?;
    let d = u.dims();
    if d.nx > NAIVE_MAX_DIMS[0] || d.ny > NAIVE_MAX_DIMS[1] || d.nz > NAIVE_MAX_DIMS[2] {
        return Err(OracleError::TooLarge(format!(
            "{:?} exceeds {:?}",
            d.as_array(),
            NAIVE_MAX_DIMS
        )));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(OracleError::Invalid(format!("normalisation {c}")));
    }
    let (nx, ny, nz) = (d.nx as isize, d.ny as isize, d.nz as isize);
    let (cx, cy, cz) = (nx / 2, ny / 2, nz / 2);
    let inside = |a: isize, n: isize| (0..n).contains(&a);
    let mut f = Volume::zeros(d);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut acc = 0.0;
                for r in 0..nz {
                    let m = k - r + cz;
                    if !inside(m, nz) {
                        continue;
                    }
                    for q in 0..ny {
                        let hj = j - q + cy;
                        if !inside(hj, ny) {
                            continue;
                        }
                        for p in 0..nx {
                            let hi = i - p + cx;
                            if !inside(hi, nx) {
                                continue;
                            }
                            let (p, q, r) = (p as usize, q as usize, r as usize);
                            acc += l.get(p, q, r) * u.get(p, q, m as usize) * h.get(hi as usize, hj as usize, r);
                        }
                    }
                }
                f.set(i as usize, j as usize, k as usize, acc / c);
            }
        }
    }
    Ok(f)
}

/// Search box and final spacing of a grid minimisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

/// Minimises `obj` over the lattice `lo + step·ℤ` inside `[lo, hi]²`.
///
/// Every lattice value of the first variable is visited. For the second the
/// objective must be convex along each lattice row, so the row minimum is
/// the first index whose forward difference is non-negative, found by
/// bisection. The result is the exact lattice minimiser.
fn grid_argmin_2d(grid: GridSpec, obj: impl Fn(f64, f64) -> f64) -> (f64, f64, f64) {
    let GridSpec { lo, hi, step } = grid;
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let point = |idx: usize| lo + idx as f64 * step;
    let mut best = (f64::INFINITY, lo, lo);
    for a in 0..=n {
        let x = point(a);
        let row = |b: usize| obj(x, point(b));
        // smallest b in [0, n] with row(b + 1) >= row(b), or n
        let (mut left, mut right) = (0usize, n);
        while left < right {
            let mid = (left + right) / 2;
            if row(mid + 1) >= row(mid) {
                right = mid;
            } else {
                left = mid + 1;
            }
        }
        let v = row(left);
        if v < best.0 {
            best = (v, x, point(left));
        }
    }
    (best.1, best.2, best.0)
}

/// `u − v + v·log(v/u)` with `0·log 0 = 0`.
pub fn kl_pointwise(v: f64, u: f64) -> f64 {
    if v == 0.0 {
        u
    } else if u <= 0.0 {
        f64::INFINITY
    } else {
        u - v + v * (v / u).ln()
    }
}

/// Grid minimiser of `D(v, u) + (1/2γ)((u−u*)² + (v−v*)²)`; returns `(u, v)`.
pub fn grid_prox_kl(u_star: f64, v_star: f64, gamma: f64, grid: GridSpec) -> (f64, f64) {
    let (u, v, _) = grid_argmin_2d(grid, |u, v| {
        kl_pointwise(v, u) + ((u - u_star).powi(2) + (v - v_star).powi(2)) / (2.0 * gamma)
    });
    (u, v)
}

/// Grid maximum of `u·u* + v·v* − D(v, u)` over `[lo, hi]²`.
pub fn grid_sup_conj_kl(u_star: f64, v_star: f64, grid: GridSpec) -> f64 {
    -grid_argmin_2d(grid, |u, v| -(u * u_star + v * v_star - kl_pointwise(v, u))).2
}

/// Euclidean projection of `(a, b)` onto `{(a, b) : a + eᵇ ≤ 1}`, the domain
/// of the divergence's conjugate (where that conjugate is zero).
///
/// Outside the set the projection lies on the boundary curve `a = 1 − eᵇ`
/// with `b` between `log(1 − a)` (or −∞) and the input `b`; there the
/// stationarity condition is strictly increasing in `b`, so plain bisection
/// finds it.
pub fn project_kl_conj_domain(a: f64, b: f64) -> (f64, f64) {
    if a + b.exp() <= 1.0 {
        return (a, b);
    }
    let phi = |t: f64| (t - b) - t.exp() * (1.0 - t.exp() - a);
    let mut hi = b;
    let mut lo = if a < 1.0 { (1.0 - a).ln() } else { b - 1.0 };
    while phi(lo) > 0.0 {
        lo -= 2.0 * (hi - lo).max(1.0);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    (1.0 - t.exp(), t)
}

/// Dense matrix of a linear map on volumes of shape `dims`: column `j` is the
/// image of the `j`-th unit volume.
pub fn dense_materialize(dims: Dims, mut apply: impl FnMut(&Volume) -> Volume) -> Result<DMatrix<f64>> {
    let n = dims.len();
    if n > DENSE_MAX_LEN {
        return Err(OracleError::TooLarge(format!("{n} voxels exceed {DENSE_MAX_LEN}")));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut e = Volume::zeros(dims);
    for j in 0..n {
        e.as_mut_slice()[j] = 1.0;
        let col = apply(&e);
        if col.len() != n {
            return Err(OracleError::Invalid("map changes the volume size".into()));
        }
        for (i, &x) in col.as_slice().iter().enumerate() {
            m[(i, j)] = x;
        }
        e.as_mut_slice()[j] = 0.0;
    }
    Ok(m)
}

/// Largest singular value by a full SVD.
pub fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Mean SSIM over every voxel whose `size³` window fits inside the volume,
/// summing each window explicitly.
pub fn naive_ssim3(x: &Volume, y: &Volume, size: usize, sigma: f64, dynamic_range: f64) -> Result<f64> {
    same_dims(x, y)?;
    let d = x.dims();
    if size % 2 == 0 || d.nx < size || d.ny < size || d.nz < size {
        return Err(OracleError::Invalid("window must be odd and fit the volume".into()));
    }
    let r = (size / 2) as f64;
    let mut w = vec![0.0; size * size * size];
    let mut total = 0.0;
    for c in 0..size {
        for b in 0..size {
            for a in 0..size {
                let d2 = (a as f64 - r).powi(2) + (b as f64 - r).powi(2) + (c as f64 - r).powi(2);
                let v = (-d2 / (2.0 * sigma * sigma)).exp();
                w[a + size * (b + size * c)] = v;
                total += v;
            }
        }
    }
    for v in &mut w {
        *v /= total;
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for k0 in 0..=(d.nz - size) {
        for j0 in 0..=(d.ny - size) {
            for i0 in 0..=(d.nx - size) {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for c in 0..size {
                    for b in 0..size {
                        for a in 0..size {
                            let wt = w[a + size * (b + size * c)];
                            let p = x.get(i0 + a, j0 + b, k0 + c);
                            let q = y.get(i0 + a, j0 + b, k0 + c);
                            mx += wt * p;
                            my += wt * q;
                            sxx += wt * p * p;
                            syy += wt * q * q;
                            sxy += wt * p * q;
                        }
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Mean and standard error of `2(Y log(Y/β) + β − Y)` for `Y ~ Poisson(β)`.
pub fn mc_poisson_deviance(beta: f64, draws: usize, seed: u64) -> Result<(f64, f64)> {
    let dist = Poisson::new(beta).map_err(|e| OracleError::Invalid(e.to_string()))?;
    if draws < 2 {
        return Err(OracleError::Invalid("need two or more draws".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let y: f64 = dist.sample(&mut rng);
            let ylog = if y > 0.0 { y * (y / beta).ln() } else { 0.0 };
            2.0 * (ylog + beta - y)
        })
        .collect();
    let n = draws as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
