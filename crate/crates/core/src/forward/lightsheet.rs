use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{center, estimate_op_norm, Boundary, LinearOperator, PowerIterOptions};
use crate::error::{Error, Result};
use crate::fft::{good_size, wrap, Fft2};
use crate::volume::{check_dims, Dims, Volume};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Light-sheet image formation with a z-dependent illumination:
///
/// `f[i,j,k] = (1/C) Σ l[i',j',k'] · u[i',j',k−k'+cz] · h[i−i'+cx, j−j'+cy, k']`
///
/// Each illumination plane `k'` multiplies the sample shifted by `k'−cz`
/// planes and is then blurred laterally by the matching kernel plane. The
/// constant `C` makes the operator norm 1 when built with [`LightsheetOperator::new`].
///
/// Lateral convolutions run as 2D FFTs on padded planes. Two real output
/// planes share one complex transform (real and imaginary parts), which
/// halves the inverse transforms in `apply` and the forward ones in `adjoint`.
pub struct LightsheetOperator {
    dims: Dims,
    boundary: Boundary,
    illumination: Volume,
    kernel: Volume,
    normalization: f64,
    fft: Arc<Fft2>,
    /// Transform of each wrapped kernel plane.
    kernel_hat: Vec<Vec<Complex64>>,
}

impl std::fmt::Debug for LightsheetOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LightsheetOperator")
            .field("dims", &self.dims)
            .field("boundary", &self.boundary)
            .field("normalization", &self.normalization)
            .field("padded", &(self.fft.width(), self.fft.height()))
            .finish()
    }
}

impl LightsheetOperator {
    /// Builds the operator and scales it to unit norm by power iteration.
    pub fn new(illumination: Volume, kernel: Volume, boundary: Boundary) -> Result<Self> {
        let mut op = Self::with_normalization(illumination, kernel, 1.0, boundary)?;
        let est = estimate_op_norm(&op, &PowerIterOptions::precise())?;
        if !(est.value > 0.0 && est.value.is_finite()) {
            return Err(Error::param(
                "light-sheet operator is zero; illumination or kernel vanishes",
            ));
        }
        if !est.converged {
            log::warn!(
                "operator norm power iteration stopped after {} iterations",
                est.iterations
            );
        }
        op.normalization = est.value;
        Ok(op)
    }

    /// Builds the operator with an explicit normalisation constant.
    pub fn with_normalization(
        illumination: Volume,
        kernel: Volume,
        normalization: f64,
        boundary: Boundary,
    ) -> Result<Self> {
        let dims = illumination.dims();
        check_dims(dims, kernel.dims())?;
        if !(normalization.is_finite() && normalization > 0.0) {
            return Err(Error::param(format!(
                "normalisation constant must be positive, got {normalization}"
            )));
        }
        if !illumination.is_finite() || !kernel.is_finite() {
            return Err(Error::NonFinite("illumination or kernel".into()));
        }
        let (w, h) = match boundary {
            Boundary::ZeroPad => (good_size(2 * dims.nx - 1), good_size(2 * dims.ny - 1)),
            Boundary::Circular => (dims.nx, dims.ny),
        };
        let fft = Fft2::cached(w, h);
        let (cx, cy) = (center(dims.nx), center(dims.ny));
        let kernel_hat = (0..dims.nz)
            .into_par_iter()
            .map(|k| {
                let plane = kernel.plane(k);
                let mut buf = vec![C0; w * h];
                for j in 0..dims.ny {
                    let pj = wrap(j as isize - cy as isize, h);
                    for i in 0..dims.nx {
                        let pi = wrap(i as isize - cx as isize, w);
                        buf[pj * w + pi] += plane[j * dims.nx + i];
                    }
                }
                let mut scratch = fft.scratch();
                fft.forward_spectral(&mut buf, h, &mut scratch);
                buf
            })
            .collect();
        Ok(LightsheetOperator {
            dims,
            boundary,
            illumination,
            kernel,
            normalization,
            fft,
            kernel_hat,
        })
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn illumination(&self) -> &Volume {
        &self.illumination
    }

    pub fn kernel(&self) -> &Volume {
        &self.kernel
    }

    /// Sample plane feeding output plane `k` through illumination plane `kp`.
    #[inline]
    fn source_plane(&self, k: usize, kp: usize) -> Option<usize> {
        let nz = self.dims.nz as isize;
        let m = k as isize - kp as isize + center(self.dims.nz) as isize;
        match self.boundary {
            Boundary::ZeroPad => (0..nz).contains(&m).then_some(m as usize),
            Boundary::Circular => Some(wrap(m, self.dims.nz)),
        }
    }

    /// Output plane reached from sample plane `c` through illumination plane `kp`.
    #[inline]
    fn target_plane(&self, c: usize, kp: usize) -> Option<usize> {
        let nz = self.dims.nz as isize;
        let k = c as isize + kp as isize - center(self.dims.nz) as isize;
        match self.boundary {
            Boundary::ZeroPad => (0..nz).contains(&k).then_some(k as usize),
            Boundary::Circular => Some(wrap(k, self.dims.nz)),
        }
    }

    fn apply_slice(&self, u: &[f64], out: &mut [f64]) {
        let Dims { nx, ny, nz } = self.dims;
        let pl = nx * ny;
        let w = self.fft.width();
        let scale = 1.0 / self.normalization;
        out.par_chunks_mut(2 * pl).enumerate().for_each_init(
            || (self.fft.scratch(), vec![C0; self.fft.len()], vec![C0; self.fft.len()]),
            |(scratch, buf, acc), (p, chunk)| {
                let k1 = 2 * p;
                let k2 = (k1 + 1 < nz).then_some(k1 + 1);
                acc.fill(C0);
                for kp in 0..nz {
                    let m1 = self.source_plane(k1, kp);
                    let m2 = k2.and_then(|k| self.source_plane(k, kp));
                    if m1.is_none() && m2.is_none() {
                        continue;
                    }
                    buf.fill(C0);
                    let lp = self.illumination.plane(kp);
                    for j in 0..ny {
                        for i in 0..nx {
                            let idx = j * nx + i;
                            let re = m1.map_or(0.0, |m| lp[idx] * u[m * pl + idx]);
                            let im = m2.map_or(0.0, |m| lp[idx] * u[m * pl + idx]);
                            buf[j * w + i] = Complex64::new(re, im);
                        }
                    }
                    self.fft.forward_spectral(buf, ny, scratch);
                    for ((a, b), hk) in acc.iter_mut().zip(buf.iter()).zip(&self.kernel_hat[kp]) {
                        *a += b * hk;
                    }
                }
                self.fft.inverse_spectral(acc, ny, scratch);
                let (first, second) = chunk.split_at_mut(pl);
                for j in 0..ny {
                    for i in 0..nx {
                        let v = acc[j * w + i];
                        first[j * nx + i] = v.re * scale;
                        if !second.is_empty() {
                            second[j * nx + i] = v.im * scale;
                        }
                    }
                }
            },
        );
    }

    fn adjoint_slice(&self, f: &[f64], out: &mut [f64]) {
        let Dims { nx, ny, nz } = self.dims;
        let pl = nx * ny;
        let w = self.fft.width();
        let scale = 1.0 / self.normalization;
        // transforms of the padded data planes, shared by all output pairs
        let data_hat: Vec<Vec<Complex64>> = (0..nz)
            .into_par_iter()
            .map_init(
                || self.fft.scratch(),
                |scratch, k| {
                    let mut buf = vec![C0; self.fft.len()];
                    let plane = &f[k * pl..(k + 1) * pl];
                    for j in 0..ny {
                        for i in 0..nx {
                            buf[j * w + i] = Complex64::new(plane[j * nx + i], 0.0);
                        }
                    }
                    self.fft.forward_spectral(&mut buf, ny, scratch);
                    buf
                },
            )
            .collect();
        out.par_chunks_mut(2 * pl).enumerate().for_each_init(
            || (self.fft.scratch(), vec![C0; self.fft.len()]),
            |(scratch, buf), (p, chunk)| {
                chunk.fill(0.0);
                let c1 = 2 * p;
                let c2 = (c1 + 1 < nz).then_some(c1 + 1);
                for kp in 0..nz {
                    let ka = self.target_plane(c1, kp);
                    let kb = c2.and_then(|c| self.target_plane(c, kp));
                    if ka.is_none() && kb.is_none() {
                        continue;
                    }
                    let hk = &self.kernel_hat[kp];
                    for (idx, b) in buf.iter_mut().enumerate() {
                        let hc = hk[idx].conj();
                        let a = ka.map_or(C0, |k| data_hat[k][idx] * hc);
                        let d = kb.map_or(C0, |k| data_hat[k][idx] * hc);
                        // a + i·d
                        *b = Complex64::new(a.re - d.im, a.im + d.re);
                    }
                    self.fft.inverse_spectral(buf, ny, scratch);
                    let lp = self.illumination.plane(kp);
                    let (first, second) = chunk.split_at_mut(pl);
                    for j in 0..ny {
                        for i in 0..nx {
                            let idx = j * nx + i;
                            let v = buf[j * w + i];
                            first[idx] += lp[idx] * v.re;
                            if !second.is_empty() {
                                second[idx] += lp[idx] * v.im;
                            }
                        }
                    }
                }
                for v in chunk.iter_mut() {
                    *v *= scale;
                }
            },
        );
    }
}

impl LinearOperator for LightsheetOperator {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn apply(&self, u: &Volume) -> Result<Volume> {
        check_dims(self.dims, u.dims())?;
        let mut out = u.zeros_like();
        self.apply_slice(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    fn adjoint(&self, f: &Volume) -> Result<Volume> {
        check_dims(self.dims, f.dims())?;
        let mut out = f.zeros_like();
        self.adjoint_slice(f.as_slice(), out.as_mut_slice());
        Ok(out)
    }
}
