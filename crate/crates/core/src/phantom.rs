//! Ground-truth volumes and the mixed Poisson-Gaussian noise model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Procedural phantom choices exposed to configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    Beads {
        #[serde(default = "default_bead_grid")]
        grid: [usize; 3],
        /// Radius in voxels.
        radius: f64,
    },
    Steps {
        levels: usize,
    },
    Cells {
        seeds: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_bead_grid() -> [usize; 3] {
    [5, 5, 5]
}

impl PhantomSpec {
    pub fn build(&self, dims: Dims) -> Result<Volume> {
        match *self {
            PhantomSpec::Beads { grid, radius } => make_beads(dims, grid, radius),
            PhantomSpec::Steps { levels } => make_steps(dims, levels),
            PhantomSpec::Cells { seeds, seed } => make_cells(dims, seeds, seed),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhantomSpec::Beads { .. } => "beads",
            PhantomSpec::Steps { .. } => "steps",
            PhantomSpec::Cells { .. } => "cells",
        }
    }
}

/// Regular grid of solid spheres with intensity 1.
///
/// Centres sit at `(n−1)/2 + (m − (g−1)/2)·n/g` along each axis, so the
/// arrangement is mirror symmetric about the volume centre. A voxel belongs
/// to a sphere when its centre lies within `radius` of the sphere centre.
pub fn make_beads(dims: Dims, grid: [usize; 3], radius: f64) -> Result<Volume> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::param(format!("bead radius must be positive, got {radius}")));
    }
    let n = dims.as_array();
    let mut centres: [Vec<f64>; 3] = Default::default();
    for a in 0..3 {
        let g = grid[a];
        if g == 0 {
            return Err(Error::param("bead grid needs at least one bead per axis"));
        }
        let spacing = n[a] as f64 / g as f64;
        let mid = (n[a] as f64 - 1.0) / 2.0;
        centres[a] = (0..g)
            .map(|m| mid + (m as f64 - (g as f64 - 1.0) / 2.0) * spacing)
            .collect();
        let first = centres[a][0];
        let last = centres[a][g - 1];
        if first - radius < -1e-9 || last + radius > n[a] as f64 - 1.0 + 1e-9 || (g > 1 && spacing <= 2.0 * radius) {
            return Err(Error::param(format!(
                "a {g}-bead row of radius {radius} does not fit along an axis of {} voxels",
                n[a]
            )));
        }
    }
    let r2 = radius * radius * (1.0 + 1e-12);
    let nearest = |c: &[f64], x: f64| {
        c.iter()
            .map(|&p| (x - p) * (x - p))
            .fold(f64::INFINITY, f64::min)
    };
    Ok(Volume::from_fn(dims, |i, j, k| {
        // spheres are disjoint, so the nearest centre per axis decides
        let d2 = nearest(&centres[0], i as f64)
            + nearest(&centres[1], j as f64)
            + nearest(&centres[2], k as f64);
        if d2 <= r2 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Slabs along x with intensities `1/n, 2/n, …, 1`.
pub fn make_steps(dims: Dims, levels: usize) -> Result<Volume> {
    if levels < 2 || levels > dims.nx {
        return Err(Error::param(format!(
            "steps phantom needs 2 <= levels <= nx, got {levels}"
        )));
    }
    Ok(Volume::from_fn(dims, |i, _, _| {
        let level = i * levels / dims.nx;
        (level + 1) as f64 / levels as f64
    }))
}

/// Voronoi tissue surrogate: bright membranes between cells and along the
/// volume boundary, dim interiors.
pub fn make_cells(dims: Dims, seeds: usize, seed: u64) -> Result<Volume> {
    const INTERIOR: f64 = 0.2;
    const MEMBRANE_WIDTH: f64 = 1.0;
    if seeds == 0 {
        return Err(Error::param("cells phantom needs at least one seed"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 3]> = (0..seeds)
        .map(|_| {
            [
                rng.random_range(0.0..dims.nx as f64),
                rng.random_range(0.0..dims.ny as f64),
                rng.random_range(0.0..dims.nz as f64),
            ]
        })
        .collect();
    Ok(Volume::from_fn(dims, |i, j, k| {
        let on_shell =
            i == 0 || j == 0 || k == 0 || i + 1 == dims.nx || j + 1 == dims.ny || k + 1 == dims.nz;
        if on_shell {
            return 1.0;
        }
        let p = [i as f64, j as f64, k as f64];
        let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
        for s in &pts {
            let d = ((p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) + (p[2] - s[2]).powi(2)).sqrt();
            if d < d1 {
                d2 = d1;
                d1 = d;
            } else if d < d2 {
                d2 = d;
            }
        }
        // d2 − d1 is zero on a cell wall and grows towards the cell centre
        let closeness = 1.0 - (d2 - d1) / MEMBRANE_WIDTH;
        INTERIOR + (1.0 - INTERIOR) * closeness.clamp(0.0, 1.0)
    }))
}

/// Noise model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation of the additive Gaussian component, in counts.
    pub sigma_g: f64,
    /// Target maximum of the clean image, in counts.
    pub peak: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_g.is_finite() && self.sigma_g >= 0.0) {
            return Err(Error::param(format!("sigma_g must be >= 0, got {}", self.sigma_g)));
        }
        if !(self.peak.is_finite() && self.peak > 0.0) {
            return Err(Error::param(format!("peak must be positive, got {}", self.peak)));
        }
        Ok(())
    }
}

/// Noisy measurement together with the factor that mapped the clean image
/// to counts.
#[derive(Clone, Debug)]
pub struct Corrupted {
    pub data: Volume,
    /// `peak / max(f_clean)`; 1 for an all-zero input.
    pub scale: f64,
}

/// Per-voxel generator keyed on `(seed, voxel index)`, independent of the
/// order in which voxels are visited.
fn voxel_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

/// Rescales `f_clean` to the target peak and draws
/// `Poisson(mean) + Normal(0, σ)` per voxel. Negative samples are kept.
pub fn corrupt(f_clean: &Volume, spec: &NoiseSpec) -> Result<Corrupted> {
    spec.validate()?;
    if f_clean.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::param("clean image must be finite and non-negative"));
    }
    let m = f_clean.max();
    let scale = if m > 0.0 { spec.peak / m } else { 1.0 };
    let gauss = if spec.sigma_g > 0.0 {
        Some(Normal::new(0.0, spec.sigma_g).map_err(|e| Error::param(e.to_string()))?)
    } else {
        None
    };
    let seed = spec.seed;
    let mut out = f_clean.zeros_like();
    out.as_mut_slice()
        .par_iter_mut()
        .zip(f_clean.as_slice())
        .enumerate()
        .try_for_each(|(idx, (o, &c))| -> Result<()> {
            let mut rng = voxel_rng(seed, idx);
            let mean = c * scale;
            let counts = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::param(format!("poisson mean {mean}: {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            let read = gauss.map_or(0.0, |g| g.sample(&mut rng));
            *o = counts + read;
            Ok(())
        })?;
    Ok(Corrupted { data: out, scale })
}
