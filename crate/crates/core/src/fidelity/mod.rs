//! Variational building blocks: data terms, their proximal maps and convex
//! conjugates, total variation, and the box constraint.

mod kl;
mod tv;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Volume, REDUCTION_CHUNK};

pub use kl::{
    conj_kl_joint, conj_kl_scalar, kl_conj_objective, kl_div, kl_term, prox_kl_joint,
    prox_kl_objective, prox_kl_residual, prox_kl_scalar, KlProx,
};
pub(crate) use kl::{conj_kl_sum, kl_sum};
pub use tv::{div3, grad3, in_dual_ball, prox_conj_l1, prox_conj_l1_inplace, tv_norm, Field3, TvKind};

/// Closed interval constraint on intensities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lo: f64,
    pub hi: f64,
}

impl BoxBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = BoxBounds { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo >= 0.0 && self.lo < self.hi {
            Ok(())
        } else {
            Err(Error::param(format!(
                "box needs 0 <= lo < hi, got [{}, {}]",
                self.lo, self.hi
            )))
        }
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

/// Which data term the problem uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityKind {
    /// `‖f − Au‖²/(2σ²)` only.
    L2Only,
    /// Infimal convolution of a Gaussian and a Poisson term:
    /// `min_v ‖f − v‖²/(2σ²) + D(v, Au)`.
    #[default]
    InfimalConvolution,
}

/// Data term of a reconstruction problem.
#[derive(Clone, Debug)]
pub struct FidelitySpec {
    pub kind: FidelityKind,
    pub sigma_g: f64,
    pub data: Volume,
    pub bounds: BoxBounds,
}

impl FidelitySpec {
    pub fn new(kind: FidelityKind, sigma_g: f64, data: Volume, bounds: BoxBounds) -> Result<Self> {
        if !(sigma_g.is_finite() && sigma_g > 0.0) {
            return Err(Error::param(format!("sigma_g must be positive, got {sigma_g}")));
        }
        bounds.validate()?;
        if !data.is_finite() {
            return Err(Error::NonFinite("measured data".into()));
        }
        Ok(FidelitySpec {
            kind,
            sigma_g,
            data,
            bounds,
        })
    }
}

/// Proximal map of `τ‖· − f‖²/(2σ²)` at `v*`: `(σ²v* + τf)/(σ² + τ)`.
pub fn prox_l2(v_star: &Volume, f: &Volume, sigma_g: f64, tau: f64) -> Result<Volume> {
    if !(sigma_g > 0.0 && tau > 0.0) {
        return Err(Error::param("prox_l2 needs positive sigma_g and tau"));
    }
    let s2 = sigma_g * sigma_g;
    v_star.zip_map(f, |v, fv| (s2 * v + tau * fv) / (s2 + tau))
}

/// Elementwise projection of both components onto the box.
pub fn project_box(u: &Volume, v: &Volume, bounds: BoxBounds) -> Result<(Volume, Volume)> {
    u.check_same_dims(v)?;
    bounds.validate()?;
    Ok((u.clamp(bounds.lo, bounds.hi), v.clamp(bounds.lo, bounds.hi)))
}

/// Conjugate of the box indicator summed over voxels: `Σ max(lo·y, hi·y)`.
pub fn conj_box(y: &Volume, bounds: BoxBounds) -> f64 {
    conj_box_slice(y.as_slice(), bounds)
}

pub(crate) fn conj_box_slice(y: &[f64], b: BoxBounds) -> f64 {
    let partial: Vec<f64> = y
        .par_chunks(REDUCTION_CHUNK)
        .map(|c| c.iter().map(|&v| (b.lo * v).max(b.hi * v)).sum::<f64>())
        .collect();
    partial.iter().sum()
}
