use num_complex::Complex64;

use super::{center, Boundary, LinearOperator};
use crate::error::{Error, Result};
use crate::fft::{good_size, wrap, Fft3};
use crate::volume::{check_dims, Dims, Volume};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Shift-invariant 3D convolution with a centred kernel:
/// `f[i] = Σ u[i'] · h[i − i' + c]`.
pub struct ConvolutionOperator {
    dims: Dims,
    boundary: Boundary,
    fft: Fft3,
    kernel_hat: Vec<Complex64>,
}

impl std::fmt::Debug for ConvolutionOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvolutionOperator")
            .field("dims", &self.dims)
            .field("boundary", &self.boundary)
            .field("padded", &self.fft.dims())
            .finish()
    }
}

impl ConvolutionOperator {
    pub fn new(kernel: Volume, boundary: Boundary) -> Result<Self> {
        let dims = kernel.dims();
        if !kernel.is_finite() {
            return Err(Error::NonFinite("convolution kernel".into()));
        }
        let pad = |n: usize| match boundary {
            Boundary::ZeroPad => good_size(2 * n - 1),
            Boundary::Circular => n,
        };
        let (w, h, d) = (pad(dims.nx), pad(dims.ny), pad(dims.nz));
        let fft = Fft3::new(w, h, d);
        let c = dims.center();
        let mut buf = vec![C0; w * h * d];
        for k in 0..dims.nz {
            let pk = wrap(k as isize - c[2] as isize, d);
            for j in 0..dims.ny {
                let pj = wrap(j as isize - c[1] as isize, h);
                for i in 0..dims.nx {
                    let pi = wrap(i as isize - c[0] as isize, w);
                    buf[(pk * h + pj) * w + pi] += kernel.get(i, j, k);
                }
            }
        }
        debug_assert_eq!(c[0], center(dims.nx));
        fft.forward(&mut buf);
        Ok(ConvolutionOperator {
            dims,
            boundary,
            fft,
            kernel_hat: buf,
        })
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    fn run(&self, x: &Volume, conjugate: bool) -> Result<Volume> {
        check_dims(self.dims, x.dims())?;
        let [w, h, _] = self.fft.dims();
        let Dims { nx, ny, nz } = self.dims;
        let mut buf = vec![C0; self.fft.len()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    buf[(k * h + j) * w + i] = Complex64::new(x.get(i, j, k), 0.0);
                }
            }
        }
        self.fft.forward(&mut buf);
        for (b, kh) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= if conjugate { kh.conj() } else { *kh };
        }
        self.fft.inverse(&mut buf);
        Ok(Volume::from_fn(self.dims, |i, j, k| buf[(k * h + j) * w + i].re)
            .with_pitch(x.pitch())
            .with_origin(x.origin()))
    }
}

impl LinearOperator for ConvolutionOperator {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn apply(&self, u: &Volume) -> Result<Volume> {
        self.run(u, false)
    }

    fn adjoint(&self, f: &Volume) -> Result<Volume> {
        self.run(f, true)
    }
}
