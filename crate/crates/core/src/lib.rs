//! Light-sheet microscopy deconvolution.
//!
//! The crate synthesises the optical forward model of a light-sheet
//! microscope (an excitation sheet multiplying the sample, followed by an
//! aberrated detection PSF) and inverts it under mixed Poisson-Gaussian noise
//! with a primal-dual solver over an infimal-convolution data term and
//! anisotropic total variation.
//!
//! Modules, bottom-up:
//! - [`volume`]: dense 3D fields, file I/O, projections
//! - [`optics`]: Zernike pupils, detection PSF, light-sheet profile, bead fits
//! - [`forward`]: the light-sheet operator, plain convolution, norm estimates
//! - [`fidelity`]: KL divergence, proximal maps and conjugates
//! - [`solver`]: the primal-dual iteration and the four method variants
//! - [`phantom`], [`tuning`], [`metrics`]: experiments around the solver
//! - [`config`] and [`cli`]: the `lsdeconv` command line

pub mod cli;
pub mod config;
pub mod error;
pub(crate) mod fft;
pub mod fidelity;
pub mod forward;
pub mod metrics;
pub mod optics;
pub mod phantom;
pub mod solver;
pub mod tuning;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{dot, Dims, Pitch, Volume};
