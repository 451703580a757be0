//! Discrete gradient, its negative adjoint, and the proximal pieces of the
//! total-variation term.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{check_dims, Dims, Volume};

/// Three-component vector field on a grid, one volume per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Field3 {
    pub x: Volume,
    pub y: Volume,
    pub z: Volume,
}

impl Field3 {
    pub fn zeros(dims: Dims) -> Self {
        Field3 {
            x: Volume::zeros(dims),
            y: Volume::zeros(dims),
            z: Volume::zeros(dims),
        }
    }

    pub fn dims(&self) -> Dims {
        self.x.dims()
    }

    pub fn components(&self) -> [&Volume; 3] {
        [&self.x, &self.y, &self.z]
    }

    pub fn components_mut(&mut self) -> [&mut Volume; 3] {
        [&mut self.x, &mut self.y, &mut self.z]
    }

    fn check(&self) -> Result<()> {
        check_dims(self.x.dims(), self.y.dims())?;
        check_dims(self.x.dims(), self.z.dims())
    }

    pub fn dot(&self, other: &Field3) -> Result<f64> {
        Ok(crate::volume::dot(&self.x, &other.x)?
            + crate::volume::dot(&self.y, &other.y)?
            + crate::volume::dot(&self.z, &other.z)?)
    }

    pub fn norm_sq(&self) -> f64 {
        self.x.norm_sq() + self.y.norm_sq() + self.z.norm_sq()
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.components()
            .iter()
            .map(|c| c.as_slice().iter().fold(0.0f64, |m, &v| m.max(v.abs())))
            .fold(0.0, f64::max)
    }
}

/// How the `ℓ¹` norm of the gradient couples its three components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvKind {
    /// `Σ |∂x u| + |∂y u| + |∂z u|`.
    #[default]
    Anisotropic,
    /// `Σ ‖∇u‖₂` per voxel.
    Isotropic,
}

/// Forward differences with a replicate boundary: the last plane along each
/// axis has zero derivative.
pub fn grad3(u: &Volume) -> Field3 {
    let d = u.dims();
    let mut g = Field3::zeros(d);
    let pl = d.plane_len();
    let src = u.as_slice();
    let Field3 { x, y, z } = &mut g;
    x.as_mut_slice()
        .par_chunks_mut(pl)
        .zip(y.as_mut_slice().par_chunks_mut(pl))
        .zip(z.as_mut_slice().par_chunks_mut(pl))
        .enumerate()
        .for_each(|(k, ((gx, gy), gz))| {
            let plane = &src[k * pl..(k + 1) * pl];
            let next = (k + 1 < d.nz).then(|| &src[(k + 1) * pl..(k + 2) * pl]);
            for j in 0..d.ny {
                for i in 0..d.nx {
                    let idx = j * d.nx + i;
                    let c = plane[idx];
                    gx[idx] = if i + 1 < d.nx { plane[idx + 1] - c } else { 0.0 };
                    gy[idx] = if j + 1 < d.ny { plane[idx + d.nx] - c } else { 0.0 };
                    gz[idx] = next.map_or(0.0, |n| n[idx] - c);
                }
            }
        });
    g
}

/// Discrete divergence, defined as `−grad3ᵀ`.
pub fn div3(p: &Field3) -> Result<Volume> {
    p.check()?;
    let d = p.dims();
    let pl = d.plane_len();
    let (px, py, pz) = (p.x.as_slice(), p.y.as_slice(), p.z.as_slice());
    let mut out = Volume::zeros(d);
    out.as_mut_slice()
        .par_chunks_mut(pl)
        .enumerate()
        .for_each(|(k, o)| {
            let at = |s: &[f64], kk: usize, idx: usize| s[kk * pl + idx];
            for j in 0..d.ny {
                for i in 0..d.nx {
                    let idx = j * d.nx + i;
                    let mut v = 0.0;
                    // each axis: p[i] (if not last) − p[i−1] (if exists)
                    if i + 1 < d.nx {
                        v += at(px, k, idx);
                    }
                    if i > 0 {
                        v -= at(px, k, idx - 1);
                    }
                    if j + 1 < d.ny {
                        v += at(py, k, idx);
                    }
                    if j > 0 {
                        v -= at(py, k, idx - d.nx);
                    }
                    if k + 1 < d.nz {
                        v += at(pz, k, idx);
                    }
                    if k > 0 {
                        v -= at(pz, k - 1, idx);
                    }
                    o[idx] = v;
                }
            }
        });
    Ok(out)
}

/// `TV(u) = ‖∇u‖₁` with the chosen coupling.
pub fn tv_norm(u: &Volume, kind: TvKind) -> f64 {
    let g = grad3(u);
    match kind {
        TvKind::Anisotropic => g.x.norm_l1() + g.y.norm_l1() + g.z.norm_l1(),
        TvKind::Isotropic => g
            .x
            .as_slice()
            .iter()
            .zip(g.y.as_slice())
            .zip(g.z.as_slice())
            .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
            .sum(),
    }
}

/// Projection onto the dual ball of `α‖·‖₁`: a componentwise clamp to
/// `[−α, α]` (anisotropic), or per-voxel radial shrink onto the `α`-ball
/// (isotropic).
pub fn prox_conj_l1(y: &Field3, alpha: f64, kind: TvKind) -> Result<Field3> {
    let mut out = y.clone();
    prox_conj_l1_inplace(&mut out, alpha, kind)?;
    Ok(out)
}

pub fn prox_conj_l1_inplace(y: &mut Field3, alpha: f64, kind: TvKind) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::param(format!("TV weight must be >= 0, got {alpha}")));
    }
    y.check()?;
    match kind {
        TvKind::Anisotropic => {
            for c in y.components_mut() {
                c.map_inplace(|v| v.clamp(-alpha, alpha));
            }
        }
        TvKind::Isotropic => {
            let Field3 { x, y: yy, z } = y;
            x.as_mut_slice()
                .par_iter_mut()
                .zip(yy.as_mut_slice().par_iter_mut())
                .zip(z.as_mut_slice().par_iter_mut())
                .for_each(|((a, b), c)| {
                    let n = (*a * *a + *b * *b + *c * *c).sqrt();
                    if n > alpha {
                        let s = alpha / n;
                        *a *= s;
                        *b *= s;
                        *c *= s;
                    }
                });
        }
    }
    Ok(())
}

/// Whether `y` lies in the dual ball up to `slack`.
pub fn in_dual_ball(y: &Field3, alpha: f64, kind: TvKind, slack: f64) -> bool {
    match kind {
        TvKind::Anisotropic => y.max_abs() <= alpha + slack,
        TvKind::Isotropic => y
            .x
            .as_slice()
            .iter()
            .zip(y.y.as_slice())
            .zip(y.z.as_slice())
            .all(|((a, b), c)| (a * a + b * b + c * c).sqrt() <= alpha + slack),
    }
}
