use serde::{Deserialize, Serialize};

use super::simplex::{nelder_mead, SimplexOptions};
use super::{detection_psf, OpticalConfig, ZernikeCoeffs, COEFF_BOUND, N_ZERNIKE};
use crate::error::{Error, Result};
use crate::forward::{Boundary, ConvolutionOperator, LinearOperator};
use crate::volume::{check_dims, Dims, Pitch, Volume};

/// Fitted detection-PSF parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsfFitResult {
    pub coeffs: ZernikeCoeffs,
    /// Gaussian blur width in voxel units.
    pub sigma: f64,
    /// Gain applied to the max-normalised model.
    pub scale: f64,
    /// Offset added to the max-normalised model.
    pub shift: f64,
    /// Squared error between the fitted model and the max-normalised bead.
    pub residual: f64,
    pub evaluations: usize,
    /// False when the evaluation budget ran out before the simplex collapsed.
    pub converged: bool,
}

impl PsfFitResult {
    /// Starting point with the given aberrations and blur; scale and shift
    /// are recomputed by the fit.
    pub fn initial(coeffs: ZernikeCoeffs, sigma: f64) -> Self {
        PsfFitResult {
            coeffs,
            sigma,
            scale: 1.0,
            shift: 0.0,
            residual: f64::INFINITY,
            evaluations: 0,
            converged: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub max_evals: usize,
    pub f_tol_abs: f64,
    pub f_tol_rel: f64,
    pub coeff_step: f64,
    pub sigma_step: f64,
    pub sigma_max: f64,
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_evals: 3000,
            f_tol_abs: 1e-14,
            f_tol_rel: 1e-10,
            coeff_step: 0.05,
            sigma_step: 0.1,
            sigma_max: 5.0,
            restarts: 2,
        }
    }
}

const SIGMA_MIN: f64 = 1e-6;

/// Indicator of a sphere of `radius_um` centred on the grid centre.
pub fn bead_indicator(dims: Dims, pitch: Pitch, radius_um: f64) -> Result<Volume> {
    if !(radius_um.is_finite() && radius_um > 0.0) {
        return Err(Error::param(format!("bead radius must be positive, got {radius_um}")));
    }
    let c = dims.center();
    let r2 = radius_um * radius_um;
    let b = Volume::from_fn(dims, |i, j, k| {
        let dx = (i as f64 - c[0] as f64) * pitch.x;
        let dy = (j as f64 - c[1] as f64) * pitch.y;
        let dz = (k as f64 - c[2] as f64) * pitch.z;
        if dx * dx + dy * dy + dz * dz <= r2 * (1.0 + 1e-12) {
            1.0
        } else {
            0.0
        }
    });
    Ok(b.with_pitch(pitch))
}

/// Model bead image `h(c, σ) ∗ b`, divided by its maximum.
fn bead_model(
    cfg: &OpticalConfig,
    bead_op: &ConvolutionOperator,
    coeffs: &ZernikeCoeffs,
    sigma: f64,
) -> Result<Volume> {
    let h = detection_psf(cfg, coeffs, sigma)?;
    let mut m = bead_op.apply(&h)?;
    let peak = m.max();
    if !(peak > 0.0) {
        return Err(Error::param("bead model has no signal"));
    }
    m.scale_inplace(1.0 / peak);
    Ok(m)
}

/// Least-squares gain and offset of `model` against `data`, and the
/// remaining squared error.
fn affine_residual(model: &[f64], data: &[f64]) -> (f64, f64, f64) {
    let n = model.len() as f64;
    let (mut sm, mut sd, mut smm, mut smd) = (0.0, 0.0, 0.0, 0.0);
    for (&m, &d) in model.iter().zip(data) {
        sm += m;
        sd += d;
        smm += m * m;
        smd += m * d;
    }
    let var = smm - sm * sm / n;
    let (scale, shift) = if var > 0.0 {
        let a = (smd - sm * sd / n) / var;
        (a, (sd - a * sm) / n)
    } else {
        (0.0, sd / n)
    };
    let res = model
        .iter()
        .zip(data)
        .map(|(&m, &d)| (scale * m + shift - d).powi(2))
        .sum();
    (scale, shift, res)
}

/// Fits aberration coefficients and blur width to a bead image.
///
/// Both the bead and the model are divided by their maxima; the remaining
/// gain and offset are solved exactly at each evaluation, so the simplex runs
/// over the 15 coefficients and `σ` only.
pub fn fit_psf(
    bead: &Volume,
    bead_radius: f64,
    cfg: &OpticalConfig,
    init: &PsfFitResult,
    opts: &FitOptions,
) -> Result<PsfFitResult> {
    cfg.validate()?;
    let dims = cfg.dims()?;
    check_dims(dims, bead.dims())?;
    if !bead.is_finite() {
        return Err(Error::NonFinite("bead volume".into()));
    }
    let peak = bead.max();
    if !(peak > 0.0) {
        return Err(Error::param("bead volume has no positive signal"));
    }
    let data = bead.scaled(1.0 / peak);
    let b = bead_indicator(dims, cfg.pitch(), bead_radius)?;
    let bead_op = ConvolutionOperator::new(b, Boundary::ZeroPad)?;

    let unpack = |x: &[f64]| -> (ZernikeCoeffs, f64) {
        let mut c = [0.0; N_ZERNIKE];
        c.copy_from_slice(&x[..N_ZERNIKE]);
        (ZernikeCoeffs::clamped(c), x[N_ZERNIKE])
    };
    let objective = |x: &[f64]| -> f64 {
        let (c, s) = unpack(x);
        match bead_model(cfg, &bead_op, &c, s) {
            Ok(m) => affine_residual(m.as_slice(), data.as_slice()).2,
            Err(_) => f64::INFINITY,
        }
    };

    let sigma_max = opts.sigma_max.max(init.sigma);
    let mut x0: Vec<f64> = init.coeffs.as_array().to_vec();
    x0.push(init.sigma.clamp(SIGMA_MIN, sigma_max));
    let mut lower = vec![-COEFF_BOUND; N_ZERNIKE];
    lower.push(SIGMA_MIN);
    let mut upper = vec![COEFF_BOUND; N_ZERNIKE];
    upper.push(sigma_max);
    let mut step = vec![opts.coeff_step; N_ZERNIKE];
    step.push(opts.sigma_step);

    let r = nelder_mead(
        objective,
        &x0,
        &lower,
        &upper,
        &SimplexOptions {
            max_evals: opts.max_evals,
            f_tol_abs: opts.f_tol_abs,
            f_tol_rel: opts.f_tol_rel,
            initial_step: step,
            restarts: opts.restarts,
        },
    );
    if !r.f.is_finite() {
        return Err(Error::param("PSF fit found no valid model"));
    }
    if !r.converged {
        log::warn!("PSF fit used its budget of {} evaluations", opts.max_evals);
    }
    let (coeffs, sigma) = unpack(&r.x);
    let m = bead_model(cfg, &bead_op, &coeffs, sigma)?;
    let (scale, shift, residual) = affine_residual(m.as_slice(), data.as_slice());
    Ok(PsfFitResult {
        coeffs,
        sigma,
        scale,
        shift,
        residual,
        evaluations: r.evals,
        converged: r.converged,
    })
}

/// Squared error of the bead model at the given parameters, after the best
/// gain and offset, against the max-normalised bead.
pub fn fit_residual(
    bead: &Volume,
    bead_radius: f64,
    cfg: &OpticalConfig,
    coeffs: &ZernikeCoeffs,
    sigma: f64,
) -> Result<f64> {
    cfg.validate()?;
    check_dims(cfg.dims()?, bead.dims())?;
    let peak = bead.max();
    if !(peak > 0.0) {
        return Err(Error::param("bead volume has no positive signal"));
    }
    let data = bead.scaled(1.0 / peak);
    let b = bead_indicator(bead.dims(), cfg.pitch(), bead_radius)?;
    let bead_op = ConvolutionOperator::new(b, Boundary::ZeroPad)?;
    let m = bead_model(cfg, &bead_op, coeffs, sigma)?;
    Ok(affine_residual(m.as_slice(), data.as_slice()).2)
}

/// Synthesises a bead image from known parameters, max-normalised.
pub fn synthesize_bead(
    cfg: &OpticalConfig,
    coeffs: &ZernikeCoeffs,
    sigma: f64,
    bead_radius: f64,
) -> Result<Volume> {
    let dims = cfg.dims()?;
    let b = bead_indicator(dims, cfg.pitch(), bead_radius)?;
    let op = ConvolutionOperator::new(b, Boundary::ZeroPad)?;
    Ok(bead_model(cfg, &op, coeffs, sigma)?.with_pitch(cfg.pitch()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OpticalConfig {
        OpticalConfig {
            dims: [16, 16, 8],
            ..OpticalConfig::default()
        }
    }

    fn truth() -> ZernikeCoeffs {
        let mut c = [0.0; N_ZERNIKE];
        c[2] = 0.3;
        c[3] = -0.2;
        c[7] = 0.1;
        ZernikeCoeffs::new(c).unwrap()
    }

    #[test]
    fn unit_sphere_is_cross() {
        let dims = Dims::new(5, 5, 5).unwrap();
        let b = bead_indicator(dims, Pitch::default(), 1.0).unwrap();
        assert_eq!(b.sum(), 7.0);
        assert_eq!(b.get(2, 2, 2), 1.0);
        assert_eq!(b.get(3, 2, 2), 1.0);
        assert_eq!(b.get(3, 3, 2), 0.0);
        assert!(bead_indicator(dims, Pitch::default(), 0.0).is_err());
    }

    #[test]
    fn affine_residual_exact() {
        let m = [0.0, 0.5, 1.0, 0.25];
        let d: Vec<f64> = m.iter().map(|v| 2.0 * v + 0.1).collect();
        let (a, b, r) = affine_residual(&m, &d);
        assert!((a - 2.0).abs() < 1e-12 && (b - 0.1).abs() < 1e-12 && r < 1e-24);
    }

    #[test]
    fn fixed_point_at_truth() {
        let cfg = cfg();
        let bead = synthesize_bead(&cfg, &truth(), 0.8, 0.4).unwrap();
        let opts = FitOptions {
            max_evals: 200,
            restarts: 0,
            ..FitOptions::default()
        };
        let r = fit_psf(&bead, 0.4, &cfg, &PsfFitResult::initial(truth(), 0.8), &opts).unwrap();
        assert!(r.residual < 1e-20, "{}", r.residual);
        assert_eq!(r.coeffs, truth());
        assert_eq!(r.sigma, 0.8);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = cfg();
        let mut bead = synthesize_bead(&cfg, &truth(), 0.8, 0.4).unwrap();
        let init = PsfFitResult::initial(truth(), 0.8);
        assert!(fit_psf(&bead, 0.0, &cfg, &init, &FitOptions::default()).is_err());
        bead.set(0, 0, 0, f64::NAN);
        assert!(fit_psf(&bead, 0.4, &cfg, &init, &FitOptions::default()).is_err());
        let small = Volume::zeros(Dims::new(8, 8, 8).unwrap());
        assert!(fit_psf(&small, 0.4, &cfg, &init, &FitOptions::default()).is_err());
    }
}
