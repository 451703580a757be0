use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ZERNIKE: usize = 15;

/// Zernike polynomial `j` (1-based, 1..=15) at polar coordinates on the unit
/// disc. The ordering starts at tilt (`ρ cos θ`), so piston is absent.
pub fn zernike_eval(j: usize, rho: f64, theta: f64) -> Result<f64> {
    let r = rho;
    let r2 = r * r;
    let v = match j {
        1 => r * theta.cos(),
        2 => r * theta.sin(),
        3 => 2.0 * r2 - 1.0,
        4 => r2 * (2.0 * theta).cos(),
        5 => r2 * (2.0 * theta).sin(),
        6 => (3.0 * r2 - 2.0) * r * theta.cos(),
        7 => (3.0 * r2 - 2.0) * r * theta.sin(),
        8 => 6.0 * r2 * r2 - 6.0 * r2 + 1.0,
        9 => r2 * r * (3.0 * theta).cos(),
        10 => r2 * r * (3.0 * theta).sin(),
        11 => (4.0 * r2 - 3.0) * r2 * (2.0 * theta).cos(),
        12 => (4.0 * r2 - 3.0) * r2 * (2.0 * theta).sin(),
        13 => (10.0 * r2 * r2 - 12.0 * r2 + 3.0) * r * theta.cos(),
        14 => (10.0 * r2 * r2 - 12.0 * r2 + 3.0) * r * theta.sin(),
        15 => 20.0 * r2 * r2 * r2 - 30.0 * r2 * r2 + 12.0 * r2 - 1.0,
        _ => {
            return Err(Error::param(format!(
                "zernike index {j} outside 1..={N_ZERNIKE}"
            )))
        }
    };
    Ok(v)
}

/// Coefficients `c₁..c₁₅` of the pupil phase expansion, each in `[-3, 3]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ZernikeCoeffs([f64; N_ZERNIKE]);

pub const COEFF_BOUND: f64 = 3.0;

impl ZernikeCoeffs {
    /// Aberration coefficients fitted to bead images of a 1.0 NA water-dipping
    /// detection objective.
    pub const FITTED_OBJECTIVE: [f64; N_ZERNIKE] = [
        -0.7763, -0.0460, -2.3608, -1.3001, 0.2024, -0.3999, 0.0348, -1.2112, -0.1521, -0.0466,
        -0.0930, 0.0427, -0.0117, -0.0581, -0.0633,
    ];

    pub fn new(c: [f64; N_ZERNIKE]) -> Result<Self> {
        for (j, &v) in c.iter().enumerate() {
            if !v.is_finite() || v.abs() > COEFF_BOUND {
                return Err(Error::param(format!(
                    "zernike coefficient c{} = {v} outside [-3, 3]",
                    j + 1
                )));
            }
        }
        Ok(ZernikeCoeffs(c))
    }

    pub fn zero() -> Self {
        ZernikeCoeffs([0.0; N_ZERNIKE])
    }

    pub fn fitted_objective() -> Self {
        ZernikeCoeffs(Self::FITTED_OBJECTIVE)
    }

    /// Builds coefficients from arbitrary values by clamping into the box.
    pub fn clamped(c: [f64; N_ZERNIKE]) -> Self {
        ZernikeCoeffs(c.map(|v| v.clamp(-COEFF_BOUND, COEFF_BOUND)))
    }

    pub fn as_array(&self) -> &[f64; N_ZERNIKE] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    /// `Σⱼ cⱼ Zⱼ(ρ, θ)`
    pub fn phase(&self, rho: f64, theta: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| c * zernike_eval(j + 1, rho, theta).expect("index in range"))
            .sum()
    }
}

impl Default for ZernikeCoeffs {
    fn default() -> Self {
        Self::zero()
    }
}

impl TryFrom<Vec<f64>> for ZernikeCoeffs {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let arr: [f64; N_ZERNIKE] = v.try_into().map_err(|v: Vec<f64>| {
            Error::param(format!("expected {N_ZERNIKE} zernike coefficients, got {}", v.len()))
        })?;
        ZernikeCoeffs::new(arr)
    }
}

impl From<ZernikeCoeffs> for Vec<f64> {
    fn from(c: ZernikeCoeffs) -> Self {
        c.0.to_vec()
    }
}
