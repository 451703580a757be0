//! Scalar defocus PSF model.
//!
//! Frequencies are sampled on the DFT grid, `κ = fftfreq(N) / pitch`. The
//! Zernike argument is the frequency rescaled so the aperture rim sits at
//! `ρ = 1`, i.e. `ρ = |κ| λ / NA`. Components past the evanescent cutoff
//! `|κ| > n/λ` are dropped rather than propagated.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{OpticalConfig, ZernikeCoeffs};
use crate::error::{Error, Result};
use crate::fft::{freq_index, Fft2};
use crate::volume::{Dims, Volume};

/// Pupil value at spatial frequency `(kx, ky)` (cycles/µm).
pub fn pupil(kx: f64, ky: f64, coeffs: Option<&ZernikeCoeffs>, na: f64, lambda: f64) -> Complex64 {
    let cutoff = na / lambda;
    let r = kx.hypot(ky);
    if r > cutoff {
        return Complex64::new(0.0, 0.0);
    }
    match coeffs {
        Some(c) if !c.is_zero() => {
            let rho = r / cutoff;
            let theta = ky.atan2(kx);
            Complex64::from_polar(1.0, 2.0 * PI * c.phase(rho, theta))
        }
        _ => Complex64::new(1.0, 0.0),
    }
}

/// Pupil sampled on a `width × height` DFT frequency grid, unshifted order.
#[derive(Clone, Debug)]
pub struct PupilGrid {
    pub width: usize,
    pub height: usize,
    pub pitch_x: f64,
    pub pitch_y: f64,
    pub values: Vec<Complex64>,
}

impl PupilGrid {
    pub fn new(
        width: usize,
        height: usize,
        pitch_x: f64,
        pitch_y: f64,
        coeffs: Option<&ZernikeCoeffs>,
        na: f64,
        lambda: f64,
    ) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                let (kx, ky) = grid_freq(i, j, width, height, pitch_x, pitch_y);
                values.push(pupil(kx, ky, coeffs, na, lambda));
            }
        }
        PupilGrid {
            width,
            height,
            pitch_x,
            pitch_y,
            values,
        }
    }

    pub fn freq(&self, i: usize, j: usize) -> (f64, f64) {
        grid_freq(i, j, self.width, self.height, self.pitch_x, self.pitch_y)
    }

    /// `Σ |p|²` over the grid.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn grid_freq(i: usize, j: usize, w: usize, h: usize, px: f64, py: f64) -> (f64, f64) {
    (
        freq_index(i, w) as f64 / (w as f64 * px),
        freq_index(j, h) as f64 / (h as f64 * py),
    )
}

/// Intensity `|IDFT(p · e^{2iπ z √((n/λ)² − |κ|²)})|²` for each `z`, with the
/// zero offset moved to the centre sample `(w/2, h/2)`.
///
/// The inverse DFT carries the `1/N` factor, so at any plane the total
/// intensity equals `energy / N` for a grid with `N` samples.
pub fn defocus_psf(grid: &PupilGrid, lambda: f64, n: f64, z_planes: &[f64]) -> Volume {
    let (w, h) = (grid.width, grid.height);
    let fft = Fft2::cached(w, h);
    let k_medium_sq = (n / lambda).powi(2);
    let axial: Vec<Option<f64>> = (0..h)
        .flat_map(|j| (0..w).map(move |i| (i, j)))
        .map(|(i, j)| {
            let (kx, ky) = grid.freq(i, j);
            let s = k_medium_sq - kx * kx - ky * ky;
            (s >= 0.0).then(|| s.sqrt())
        })
        .collect();

    let planes: Vec<Vec<f64>> = z_planes
        .par_iter()
        .map_init(
            || fft.scratch(),
            |scratch, &z| {
                let mut field: Vec<Complex64> = grid
                    .values
                    .iter()
                    .zip(&axial)
                    .map(|(&p, kz)| match kz {
                        Some(kz) if p != Complex64::default() => {
                            p * Complex64::from_polar(1.0, 2.0 * PI * z * kz)
                        }
                        _ => Complex64::default(),
                    })
                    .collect();
                fft.inverse(&mut field, scratch);
                let mut out = vec![0.0; w * h];
                for j in 0..h {
                    for i in 0..w {
                        let dst = ((j + h / 2) % h) * w + (i + w / 2) % w;
                        out[dst] = field[j * w + i].norm_sqr();
                    }
                }
                out
            },
        )
        .collect();

    let dims = Dims::new(w, h, z_planes.len()).expect("non-empty grid");
    Volume::from_vec(dims, planes.concat()).expect("finite intensities")
}

/// Separable isotropic Gaussian blur with `sigma` in voxels. Taps are
/// truncated at `ceil(4σ)` and samples beyond the border read as zero.
pub fn gaussian_blur(v: &Volume, sigma: f64) -> Result<Volume> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::param(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);

    let d = v.dims();
    let mut cur = v.clone();
    for axis in 0..3 {
        let n = [d.nx, d.ny, d.nz][axis] as isize;
        let src = cur.clone();
        for k in 0..d.nz {
            for j in 0..d.ny {
                for i in 0..d.nx {
                    let pos = [i, j, k];
                    let c = pos[axis] as isize;
                    let mut acc = 0.0;
                    for (t, &w) in taps.iter().enumerate() {
                        let q = c + t as isize - radius;
                        if q < 0 || q >= n {
                            continue;
                        }
                        let mut p = pos;
                        p[axis] = q as usize;
                        acc += w * src.get(p[0], p[1], p[2]);
                    }
                    cur.set(i, j, k, acc);
                }
            }
        }
    }
    Ok(cur)
}

/// Detection PSF: aberrated defocus PSF, blurred by a Gaussian of width
/// `sigma_blur` voxels, normalised to unit sum.
pub fn detection_psf(cfg: &OpticalConfig, coeffs: &ZernikeCoeffs, sigma_blur: f64) -> Result<Volume> {
    cfg.validate()?;
    let dims = cfg.dims()?;
    let grid = PupilGrid::new(
        dims.nx,
        dims.ny,
        cfg.px_x,
        cfg.px_y,
        Some(coeffs),
        cfg.na_h,
        cfg.lambda_h,
    );
    let cz = dims.nz / 2;
    let z: Vec<f64> = (0..dims.nz)
        .map(|k| (k as f64 - cz as f64) * cfg.step_z)
        .collect();
    let raw = defocus_psf(&grid, cfg.lambda_h, cfg.n, &z);
    let mut h = gaussian_blur(&raw, sigma_blur)?;
    let total = h.sum();
    if !(total > 0.0) {
        return Err(Error::param("detection PSF has no energy on this grid"));
    }
    h.scale_inplace(1.0 / total);
    Ok(h.with_pitch(cfg.pitch()))
}

/// Light-sheet illumination profile.
///
/// The beam travels along x; for every x sample the transverse (z, y) field is
/// propagated from the waist with an unaberrated circular pupil of aperture
/// `na_l`. The intensity is averaged over y and broadcast back along y, so the
/// result depends on (x, z) only. Scaled to unit maximum.
pub fn lightsheet_profile(cfg: &OpticalConfig) -> Result<Volume> {
    cfg.validate()?;
    let dims = cfg.dims()?;
    // transverse grid: first axis z, second axis y
    let grid = PupilGrid::new(
        dims.nz,
        dims.ny,
        cfg.step_z,
        cfg.px_y,
        None,
        cfg.na_l,
        cfg.lambda_l,
    );
    let cx = dims.nx / 2;
    let xs: Vec<f64> = (0..dims.nx)
        .map(|i| (i as f64 - cx as f64) * cfg.px_x - cfg.focus_offset_x)
        .collect();
    // beam[z, y, x]
    let beam = defocus_psf(&grid, cfg.lambda_l, cfg.n, &xs);

    let mut profile = vec![0.0; dims.nx * dims.nz];
    for (i, p) in profile.chunks_mut(dims.nz).enumerate() {
        for (k, slot) in p.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..dims.ny {
                acc += beam.get(k, j, i);
            }
            *slot = acc / dims.ny as f64;
        }
    }
    let peak = profile.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::param("light-sheet profile has no energy on this grid"));
    }
    let l = Volume::from_fn(dims, |i, _, k| profile[i * dims.nz + k] / peak);
    Ok(l.with_pitch(cfg.pitch()))
}
