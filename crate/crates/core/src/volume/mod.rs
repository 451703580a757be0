//! Dense 3D scalar volumes.
//!
//! Samples are stored as `f64` with x varying fastest, then y, then z, so a
//! single z-plane is one contiguous `nx * ny` slice. Reductions accumulate in
//! double precision over fixed chunks of [`REDUCTION_CHUNK`] samples; the
//! per-chunk partial sums are combined in index order, which keeps results
//! identical for any thread count.

mod io;
mod mip;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{import_tiff_stack, load_volume, save_volume, save_volume_as, Dtype, VolumeHeader};
pub use mip::{mip, Axis, Image2d};

/// Chunk length used by every reduction.
pub const REDUCTION_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let dims = Dims { nx, ny, nz };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidDims(self.as_array()));
        }
        self.checked_len()
            .map(|_| ())
            .ok_or(Error::InvalidDims(self.as_array()))
    }

    pub fn checked_len(&self) -> Option<usize> {
        let n = self.nx.checked_mul(self.ny)?.checked_mul(self.nz)?;
        // payloads must stay addressable as f64 bytes
        n.checked_mul(8).filter(|&b| b <= isize::MAX as usize)?;
        Some(n)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    /// Index of the grid centre along each axis (`n / 2`), which is where a
    /// centred kernel keeps its zero offset.
    #[inline]
    pub fn center(&self) -> [usize; 3] {
        [self.nx / 2, self.ny / 2, self.nz / 2]
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

impl From<[usize; 3]> for Dims {
    fn from(d: [usize; 3]) -> Self {
        Dims {
            nx: d[0],
            ny: d[1],
            nz: d[2],
        }
    }
}

/// Physical voxel pitch in micrometres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pitch {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Pitch {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let p = Pitch { x, y, z };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.x, self.y, self.z] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("pitch must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Default for Pitch {
    fn default() -> Self {
        Pitch {
            x: 1.0,
            y: 1.0,
            z: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Centered,
    Corner,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    pitch: Pitch,
    origin: Origin,
    data: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        dims.validate().expect("invalid dims");
        Volume {
            dims,
            pitch: Pitch::default(),
            origin: Origin::Centered,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::param(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims.as_array()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume data".into()));
        }
        Ok(Volume {
            dims,
            pitch: Pitch::default(),
            origin: Origin::Centered,
            data,
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        dims.validate().expect("invalid dims");
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume {
            dims,
            pitch: Pitch::default(),
            origin: Origin::Centered,
            data,
        }
    }

    pub fn with_pitch(mut self, pitch: Pitch) -> Self {
        self.pitch = pitch;
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// A zero volume sharing dims, pitch and origin with `self`.
    pub fn zeros_like(&self) -> Self {
        Volume {
            dims: self.dims,
            pitch: self.pitch,
            origin: self.origin,
            data: vec![0.0; self.data.len()],
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn pitch(&self) -> Pitch {
        self.pitch
    }

    #[inline]
    pub fn origin(&self) -> Origin {
        self.origin
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.dims.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        let n = self.dims.plane_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.dims.plane_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn check_same_dims(&self, other: &Volume) -> Result<()> {
        check_dims(self.dims, other.dims)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Volume {
        let data = self.data.par_iter().map(|&v| f(v)).collect();
        Volume { data, ..*self }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64 + Sync) {
        self.data.par_iter_mut().for_each(|v| *v = f(*v));
    }

    /// Elementwise combination of two volumes of equal dims.
    pub fn zip_map(&self, other: &Volume, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Volume> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .par_iter()
            .zip(other.data.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Volume { data, ..*self })
    }

    pub fn scaled(&self, c: f64) -> Volume {
        self.map(|v| v * c)
    }

    pub fn scale_inplace(&mut self, c: f64) {
        self.map_inplace(|v| v * c);
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Volume) -> Result<()> {
        self.check_same_dims(x)?;
        self.data
            .par_iter_mut()
            .zip(x.data.par_iter())
            .for_each(|(s, &v)| *s += a * v);
        Ok(())
    }

    pub fn add(&self, other: &Volume) -> Result<Volume> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Volume) -> Result<Volume> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn sum(&self) -> f64 {
        chunked_sum(&self.data, |v| v)
    }

    pub fn norm_sq(&self) -> f64 {
        chunked_sum(&self.data, |v| v * v)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        chunked_sum(&self.data, f64::abs)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (idx, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = idx;
            }
        }
        self.dims.coords(best)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Volume {
        self.map(|v| v.clamp(lo, hi))
    }
}

impl std::ops::Index<(usize, usize, usize)> for Volume {
    type Output = f64;

    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        &self.data[self.dims.index(i, j, k)]
    }
}

impl std::ops::IndexMut<(usize, usize, usize)> for Volume {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        let idx = self.dims.index(i, j, k);
        &mut self.data[idx]
    }
}

pub fn check_dims(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            left: a.as_array(),
            right: b.as_array(),
        });
    }
    Ok(())
}

/// `Σⱼ aⱼ·bⱼ` accumulated in double precision over fixed chunks.
pub fn dot(a: &Volume, b: &Volume) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(dot_slices(&a.data, &b.data))
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(REDUCTION_CHUNK)
        .zip(b.par_chunks(REDUCTION_CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partial.into_iter().sum()
}

pub(crate) fn chunked_sum(data: &[f64], f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = data
        .par_chunks(REDUCTION_CHUNK)
        .map(|c| c.iter().map(|&v| f(v)).sum::<f64>())
        .collect();
    partial.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Dims::new(0, 4, 4).is_err());
        assert!(Dims::new(usize::MAX, 2, 2).is_err());
    }

    #[test]
    fn dot_zero_volume() {
        let d = Dims::new(3, 4, 5).unwrap();
        let a = random_volume(d, 1);
        assert_eq!(dot(&Volume::zeros(d), &a).unwrap(), 0.0);
    }

    #[test]
    fn dot_self_is_norm_sq() {
        let d = Dims::new(5, 3, 2).unwrap();
        let a = random_volume(d, 2);
        let n = dot(&a, &a).unwrap();
        assert!(n >= 0.0);
        assert_eq!(n, a.norm_sq());
    }

    #[test]
    fn dot_matches_triple_loop() {
        let d = Dims::new(4, 4, 4).unwrap();
        let a = random_volume(d, 3);
        let b = random_volume(d, 4);
        let mut naive = 0.0;
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    naive += a.get(i, j, k) * b.get(i, j, k);
                }
            }
        }
        assert!((dot(&a, &b).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn dot_dimension_mismatch() {
        let a = Volume::zeros(Dims::new(2, 2, 2).unwrap());
        let b = Volume::zeros(Dims::new(2, 2, 3).unwrap());
        assert!(matches!(dot(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn from_vec_rejects_nan() {
        let d = Dims::new(1, 1, 2).unwrap();
        assert!(Volume::from_vec(d, vec![0.0, f64::NAN]).is_err());
        assert!(Volume::from_vec(d, vec![0.0]).is_err());
    }

    #[test]
    fn index_layout_is_x_fastest() {
        let d = Dims::new(3, 2, 2).unwrap();
        let v = Volume::from_fn(d, |i, j, k| (i + 10 * j + 100 * k) as f64);
        assert_eq!(v.as_slice()[1], 1.0);
        assert_eq!(v.as_slice()[3], 10.0);
        assert_eq!(v.as_slice()[6], 100.0);
        assert_eq!(d.coords(7), (1, 0, 1));
        assert_eq!(v.plane(1)[0], 100.0);
    }

    proptest! {
        #[test]
        fn dot_symmetric_and_bilinear(seed in 0u64..1000, c in -3.0f64..3.0) {
            let d = Dims::new(5, 4, 3).unwrap();
            let a = random_volume(d, seed);
            let b = random_volume(d, seed + 7777);
            let e = random_volume(d, seed + 99999);
            let ab = dot(&a, &b).unwrap();
            prop_assert!((ab - dot(&b, &a).unwrap()).abs() <= 1e-12 * (1.0 + ab.abs()));
            let lhs = dot(&a.scaled(c).add(&e).unwrap(), &b).unwrap();
            let rhs = c * ab + dot(&e, &b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
