//! Thin 2D/3D wrappers over `rustfft` with a process-wide plan cache.
//!
//! Buffers are row-major with x fastest: a 2D buffer of `width × height`
//! stores sample `(x, y)` at `y * width + x`; 3D buffers append z planes.
//! Inverse transforms are normalised by the number of samples.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = planner().lock().expect("fft planner poisoned");
    if inverse {
        p.plan_fft_inverse(len)
    } else {
        p.plan_fft_forward(len)
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Signed frequency index of DFT bin `k` out of `n` (the numpy `fftfreq`
/// numerator).
#[inline]
pub fn freq_index(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Position of signed offset `d` in a wrapped buffer of length `n`.
#[inline]
pub fn wrap(d: isize, n: usize) -> usize {
    d.rem_euclid(n as isize) as usize
}

pub struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

pub struct Fft2Scratch {
    transposed: Vec<Complex64>,
    fft: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        Fft2 {
            width,
            height,
            row_fwd: plan(width, false),
            row_inv: plan(width, true),
            col_fwd: plan(height, false),
            col_inv: plan(height, true),
        }
    }

    /// Shared instance for a given size.
    pub fn cached(width: usize, height: usize) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("fft cache poisoned");
        map.entry((width, height))
            .or_insert_with(|| Arc::new(Fft2::new(width, height)))
            .clone()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }


    pub fn scratch(&self) -> Fft2Scratch {
        let s = [&self.row_fwd, &self.row_inv, &self.col_fwd, &self.col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2Scratch {
            transposed: vec![Complex64::default(); self.len()],
            fft: vec![Complex64::default(); s],
        }
    }

    #[cfg(test)]
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut Fft2Scratch) {
        self.run(buf, scratch, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut Fft2Scratch) {
        self.run(buf, scratch, true);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }

    fn run(&self, buf: &mut [Complex64], scratch: &mut Fft2Scratch, inverse: bool) {
        assert_eq!(buf.len(), self.len());
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process_with_scratch(buf, &mut scratch.fft);
        transpose(buf, &mut scratch.transposed, self.width, self.height);
        cols.process_with_scratch(&mut scratch.transposed, &mut scratch.fft);
        transpose(&scratch.transposed, buf, self.height, self.width);
    }
    /// Forward transform whose spectrum is left in column-major (transposed)
    /// order, `buf[x * height + y]`. Rows at or beyond `active_rows` must be
    /// zero on input and are not transformed. Only useful when spectra are
    /// combined pointwise and brought back with [`Fft2::inverse_spectral`].
    pub fn forward_spectral(&self, buf: &mut [Complex64], active_rows: usize, scratch: &mut Fft2Scratch) {
        assert_eq!(buf.len(), self.len());
        let active = active_rows.min(self.height);
        self.row_fwd
            .process_with_scratch(&mut buf[..active * self.width], &mut scratch.fft);
        transpose(buf, &mut scratch.transposed, self.width, self.height);
        self.col_fwd
            .process_with_scratch(&mut scratch.transposed, &mut scratch.fft);
        buf.copy_from_slice(&scratch.transposed);
    }

    /// Inverse of [`Fft2::forward_spectral`], normalised. Only rows below
    /// `keep_rows` of the natural-order output are valid afterwards.
    pub fn inverse_spectral(&self, buf: &mut [Complex64], keep_rows: usize, scratch: &mut Fft2Scratch) {
        assert_eq!(buf.len(), self.len());
        let keep = keep_rows.min(self.height);
        self.col_inv.process_with_scratch(buf, &mut scratch.fft);
        let (w, h) = (self.width, self.height);
        let t = &mut scratch.transposed[..keep * w];
        for y in 0..keep {
            for x in 0..w {
                t[y * w + x] = buf[x * h + y];
            }
        }
        self.row_inv.process_with_scratch(t, &mut scratch.fft);
        let s = 1.0 / self.len() as f64;
        for (d, c) in buf[..keep * w].iter_mut().zip(t.iter()) {
            *d = c * s;
        }
    }
}

/// `dst[x * height + y] = src[y * width + x]`
fn transpose(src: &[Complex64], dst: &mut [Complex64], width: usize, height: usize) {
    const BLOCK: usize = 16;
    for yb in (0..height).step_by(BLOCK) {
        for xb in (0..width).step_by(BLOCK) {
            for y in yb..(yb + BLOCK).min(height) {
                for x in xb..(xb + BLOCK).min(width) {
                    dst[x * height + y] = src[y * width + x];
                }
            }
        }
    }
}

pub struct Fft3 {
    plane: Arc<Fft2>,
    depth: usize,
    z_fwd: Arc<dyn Fft<f64>>,
    z_inv: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(width: usize, height: usize, depth: usize) -> Self {
        Fft3 {
            plane: Fft2::cached(width, height),
            depth,
            z_fwd: plan(depth, false),
            z_inv: plan(depth, true),
        }
    }

    pub fn len(&self) -> usize {
        self.plane.len() * self.depth
    }


    pub fn dims(&self) -> [usize; 3] {
        [self.plane.width(), self.plane.height(), self.depth]
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        use rayon::prelude::*;
        assert_eq!(buf.len(), self.len());
        let plane_len = self.plane.len();
        buf.par_chunks_mut(plane_len).for_each_init(
            || self.plane.scratch(),
            |scratch, plane| {
                if inverse {
                    self.plane.run(plane, scratch, true);
                } else {
                    self.plane.run(plane, scratch, false);
                }
            },
        );
        let z = if inverse { &self.z_inv } else { &self.z_fwd };
        let mut line = vec![Complex64::default(); self.depth];
        let mut scratch = vec![Complex64::default(); z.get_inplace_scratch_len()];
        for p in 0..plane_len {
            for (k, c) in line.iter_mut().enumerate() {
                *c = buf[k * plane_len + p];
            }
            z.process_with_scratch(&mut line, &mut scratch);
            for (k, c) in line.iter().enumerate() {
                buf[k * plane_len + p] = *c;
            }
        }
    }
}
