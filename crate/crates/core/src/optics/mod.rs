//! Optical model: Zernike-aberrated detection PSF and the light-sheet profile.

mod fit;
mod psf;
mod simplex;
mod zernike;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Pitch};

pub use fit::{bead_indicator, fit_psf, fit_residual, synthesize_bead, FitOptions, PsfFitResult};
pub use psf::{
    defocus_psf, detection_psf, gaussian_blur, lightsheet_profile, pupil, PupilGrid,
};
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};
pub use zernike::{zernike_eval, ZernikeCoeffs, COEFF_BOUND, N_ZERNIKE};

/// Microscope parameters. Lengths in micrometres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalConfig {
    /// Refractive index of the immersion medium.
    pub n: f64,
    pub na_h: f64,
    pub na_l: f64,
    pub lambda_h: f64,
    pub lambda_l: f64,
    pub px_x: f64,
    pub px_y: f64,
    pub step_z: f64,
    pub dims: [usize; 3],
    /// Lateral position of the sheet waist relative to the field centre, for
    /// fields cropped away from the focus.
    pub focus_offset_x: f64,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        OpticalConfig {
            n: 1.35,
            na_h: 1.0,
            na_l: 0.25,
            lambda_h: 0.525,
            lambda_l: 0.488,
            px_x: 0.325,
            px_y: 0.325,
            step_z: 1.0,
            dims: [32, 32, 16],
            focus_offset_x: 0.0,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive, got {v}")))
            }
        };
        positive("n", self.n)?;
        positive("na_h", self.na_h)?;
        positive("na_l", self.na_l)?;
        positive("lambda_h", self.lambda_h)?;
        positive("lambda_l", self.lambda_l)?;
        positive("px_x", self.px_x)?;
        positive("px_y", self.px_y)?;
        positive("step_z", self.step_z)?;
        if self.na_h > self.n || self.na_l > self.n {
            return Err(Error::param(format!(
                "numerical apertures ({}, {}) must not exceed n = {}",
                self.na_h, self.na_l, self.n
            )));
        }
        if !self.focus_offset_x.is_finite() {
            return Err(Error::param("focus_offset_x must be finite"));
        }
        self.dims().map(|_| ())
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn pitch(&self) -> Pitch {
        Pitch {
            x: self.px_x,
            y: self.px_y,
            z: self.step_z,
        }
    }
}
