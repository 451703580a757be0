//! Reconstruction quality: normalised l2 error, 3D SSIM and PSNR.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Gaussian SSIM window. Only the valid region, where the whole window fits
/// inside the volume, is averaged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow {
            size: 7,
            sigma: 1.5,
        }
    }
}

impl SsimWindow {
    pub fn validate(&self) -> Result<()> {
        if self.size < 3 || self.size % 2 == 0 {
            return Err(Error::param(format!(
                "ssim window must be odd and at least 3, got {}",
                self.size
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::param(format!("ssim sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Normalised 1D weights; the 3D window is their outer product.
    pub fn weights(&self) -> Vec<f64> {
        let r = (self.size / 2) as f64;
        let w: Vec<f64> = (0..self.size)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub l2_normalized: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub dynamic_range: f64,
    pub ssim_window: SsimWindow,
}

/// `‖u − truth‖ / ‖truth‖`.
pub fn l2_error(u: &Volume, truth: &Volume) -> Result<f64> {
    u.check_same_dims(truth)?;
    let t = truth.norm();
    if t == 0.0 {
        return Err(Error::param("reference volume has zero norm"));
    }
    Ok(u.sub(truth)?.norm() / t)
}

/// Dynamic range of the reference, `max − min`, falling back to 1 for a
/// constant reference so the stabilising constants stay positive.
pub fn dynamic_range(truth: &Volume) -> f64 {
    let dr = truth.max() - truth.min();
    if dr > 0.0 && dr.is_finite() {
        dr
    } else {
        1.0
    }
}

/// Valid-region separable correlation along one axis.
fn filter_axis(src: &[f64], dims: [usize; 3], axis: usize, w: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let m = w.len();
    let mut od = dims;
    od[axis] = dims[axis] + 1 - m;
    let [nx, ny, _] = dims;
    let [ox, oy, oz] = od;
    let stride = [1, nx, nx * ny][axis];
    let mut out = vec![0.0; ox * oy * oz];
    out.par_chunks_mut(ox * oy).enumerate().for_each(|(k, plane)| {
        for j in 0..oy {
            for i in 0..ox {
                let base = i + nx * (j + ny * k);
                let mut acc = 0.0;
                for (t, wt) in w.iter().enumerate() {
                    acc += wt * src[base + t * stride];
                }
                plane[j * ox + i] = acc;
            }
        }
    });
    (out, od)
}

fn local_mean(src: &[f64], dims: Dims, w: &[f64]) -> Vec<f64> {
    let d = dims.as_array();
    let (a, d) = filter_axis(src, d, 0, w);
    let (b, d) = filter_axis(&a, d, 1, w);
    filter_axis(&b, d, 2, w).0
}

/// Mean local SSIM over the valid region with constants
/// `C1 = (K1·dr)²`, `C2 = (K2·dr)²`.
pub fn ssim3(u: &Volume, truth: &Volume, window: SsimWindow, dynamic_range: f64) -> Result<f64> {
    u.check_same_dims(truth)?;
    window.validate()?;
    if !(dynamic_range.is_finite() && dynamic_range > 0.0) {
        return Err(Error::param(format!("dynamic range must be positive, got {dynamic_range}")));
    }
    let dims = u.dims();
    if dims.as_array().iter().any(|&n| n < window.size) {
        return Err(Error::param(format!(
            "volume {:?} smaller than the {}-voxel ssim window",
            dims.as_array(),
            window.size
        )));
    }
    let w = window.weights();
    let (x, y) = (u.as_slice(), truth.as_slice());
    let mx = local_mean(x, dims, &w);
    let my = local_mean(y, dims, &w);
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let sxx = local_mean(&xx, dims, &w);
    let syy = local_mean(&yy, dims, &w);
    let sxy = local_mean(&xy, dims, &w);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let total: f64 = (0..mx.len())
        .into_par_iter()
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let va = sxx[i] - a * a;
            let vb = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Peak signal-to-noise ratio in dB against the reference's dynamic range.
pub fn psnr(u: &Volume, truth: &Volume, dynamic_range: f64) -> Result<f64> {
    u.check_same_dims(truth)?;
    let mse = u.sub(truth)?.norm_sq() / u.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * dynamic_range.log10() - 10.0 * mse.log10())
}

pub fn evaluate(u: &Volume, truth: &Volume, window: SsimWindow) -> Result<MetricReport> {
    let dr = dynamic_range(truth);
    Ok(MetricReport {
        l2_normalized: l2_error(u, truth)?,
        ssim: ssim3(u, truth, window, dr)?,
        psnr: psnr(u, truth, dr)?,
        dynamic_range: dr,
        ssim_window: window,
    })
}
