//! Primal-dual reconstruction: the four method variants, problem assembly,
//! the relaxed primal-dual iteration and its duality-gap stopping rule.

mod pdhg;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::{div3, grad3, BoxBounds, FidelityKind, TvKind};
use crate::forward::{
    power_iteration, Boundary, ConvolutionOperator, LightsheetOperator, LinearOperator,
    NormEstimate, PowerIterOptions,
};
use crate::volume::{check_dims, Dims, Volume};

pub use pdhg::{pdhg_run, primal_dual_gap, GapBreakdown, GapRecord, ReconResult, SolverState};

/// Forward model × data term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodVariant {
    /// Light-sheet operator, Gaussian + Poisson infimal convolution.
    #[serde(rename = "LS-IC")]
    LsIc,
    /// Light-sheet operator, Gaussian data term only.
    #[serde(rename = "LS-L2")]
    LsL2,
    /// Shift-invariant PSF, infimal convolution.
    #[serde(rename = "PSF-IC")]
    PsfIc,
    /// Shift-invariant PSF, Gaussian data term only.
    #[serde(rename = "PSF-L2")]
    PsfL2,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 4] = [
        MethodVariant::LsIc,
        MethodVariant::LsL2,
        MethodVariant::PsfIc,
        MethodVariant::PsfL2,
    ];

    pub fn uses_lightsheet(self) -> bool {
        matches!(self, MethodVariant::LsIc | MethodVariant::LsL2)
    }

    pub fn fidelity(self) -> FidelityKind {
        match self {
            MethodVariant::LsIc | MethodVariant::PsfIc => FidelityKind::InfimalConvolution,
            MethodVariant::LsL2 | MethodVariant::PsfL2 => FidelityKind::L2Only,
        }
    }

    /// Number of composite terms in the splitting.
    pub fn n_terms(self) -> usize {
        match self.fidelity() {
            FidelityKind::InfimalConvolution => 3,
            FidelityKind::L2Only => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            MethodVariant::LsIc => "LS-IC",
            MethodVariant::LsL2 => "LS-L2",
            MethodVariant::PsfIc => "PSF-IC",
            MethodVariant::PsfL2 => "PSF-L2",
        }
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for MethodVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodVariant::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param(format!("unknown method variant {s:?}")))
    }
}

/// Iteration parameters. The primal step is derived from `sigma` and the
/// operator norm, so it is not stored here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    /// Weight of the total-variation term.
    pub alpha: f64,
    /// Dual step size.
    pub sigma: f64,
    /// Relaxation factor in (0, 2).
    pub rho: f64,
    pub max_iters: usize,
    /// Stop once the normalised duality gap falls to this value.
    pub gap_tol: f64,
    /// Evaluate the gap every this many iterations.
    pub gap_every: usize,
    pub tv: TvKind,
    /// Seed of the power iteration for the operator norm.
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            alpha: 1.0,
            sigma: 1e-4,
            rho: 0.9,
            max_iters: 10_000,
            gap_tol: 1e-6,
            gap_every: 10,
            tv: TvKind::Anisotropic,
            seed: 0x5eed,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::param(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::param(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return Err(Error::param(format!("rho must lie in (0, 2), got {}", self.rho)));
        }
        if self.max_iters == 0 || self.gap_every == 0 {
            return Err(Error::param("max_iters and gap_every must be positive"));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(Error::param("gap_tol must be >= 0"));
        }
        Ok(())
    }

    /// Primal step `τ = 1/(σ·‖Σ Lᵢ*Lᵢ‖)`.
    pub fn tau(&self, stacked_norm: f64) -> f64 {
        1.0 / (self.sigma * stacked_norm)
    }
}

/// Power-iteration estimates can undershoot; the step rule uses the estimate
/// inflated by this factor.
pub const NORM_SAFETY: f64 = 1.01;

/// The two forward models of a data set, with lazily estimated norms of
/// `A*A + ∇*∇` shared by every problem built from them.
pub struct OperatorSet {
    dims: Dims,
    lightsheet: Option<Arc<dyn LinearOperator>>,
    convolution: Option<Arc<dyn LinearOperator>>,
    ls_norm: OnceLock<NormEstimate>,
    conv_norm: OnceLock<NormEstimate>,
    ls_row_max: OnceLock<f64>,
    conv_row_max: OnceLock<f64>,
}

impl fmt::Debug for OperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSet")
            .field("dims", &self.dims)
            .field("lightsheet", &self.lightsheet.is_some())
            .field("convolution", &self.convolution.is_some())
            .finish()
    }
}

impl OperatorSet {
    pub fn new(
        lightsheet: Option<Arc<dyn LinearOperator>>,
        convolution: Option<Arc<dyn LinearOperator>>,
    ) -> Result<Self> {
        let dims = match (&lightsheet, &convolution) {
            (Some(a), Some(b)) => {
                check_dims(a.dims(), b.dims())?;
                a.dims()
            }
            (Some(a), None) => a.dims(),
            (None, Some(b)) => b.dims(),
            (None, None) => return Err(Error::param("operator set is empty")),
        };
        Ok(OperatorSet {
            dims,
            lightsheet,
            convolution,
            ls_norm: OnceLock::new(),
            conv_norm: OnceLock::new(),
            ls_row_max: OnceLock::new(),
            conv_row_max: OnceLock::new(),
        })
    }

    /// Builds both models from an illumination profile and a detection PSF.
    pub fn from_psfs(illumination: Volume, kernel: Volume, boundary: Boundary) -> Result<Self> {
        let conv = ConvolutionOperator::new(kernel.clone(), boundary)?;
        let ls = LightsheetOperator::new(illumination, kernel, boundary)?;
        Self::new(Some(Arc::new(ls)), Some(Arc::new(conv)))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn operator(&self, variant: MethodVariant) -> Result<Arc<dyn LinearOperator>> {
        let op = if variant.uses_lightsheet() {
            &self.lightsheet
        } else {
            &self.convolution
        };
        op.clone()
            .ok_or_else(|| Error::param(format!("{variant} needs an operator that was not supplied")))
    }

    fn norm_of(&self, variant: MethodVariant, seed: u64) -> Result<NormEstimate> {
        let cell = if variant.uses_lightsheet() {
            &self.ls_norm
        } else {
            &self.conv_norm
        };
        if let Some(n) = cell.get() {
            return Ok(*n);
        }
        let op = self.operator(variant)?;
        let est = forward_plus_gradient_norm(op.as_ref(), seed)?;
        Ok(*cell.get_or_init(|| est))
    }

    /// `max(A·1)`: the largest value `A` can produce from inputs in `[0, 1]`
    /// when its kernels are non-negative.
    fn row_max_of(&self, variant: MethodVariant) -> Result<f64> {
        let cell = if variant.uses_lightsheet() {
            &self.ls_row_max
        } else {
            &self.conv_row_max
        };
        if let Some(v) = cell.get() {
            return Ok(*v);
        }
        let op = self.operator(variant)?;
        let m = op.apply(&Volume::filled(self.dims, 1.0))?.max();
        Ok(*cell.get_or_init(|| m))
    }
}

/// Largest eigenvalue of `A*A + ∇*∇`, the u-block of `Σ Lᵢ*Lᵢ`.
fn forward_plus_gradient_norm(op: &dyn LinearOperator, seed: u64) -> Result<NormEstimate> {
    let dims = op.dims();
    power_iteration(
        dims.len(),
        |x| {
            let u = Volume::from_vec(dims, x.to_vec())?;
            let mut out = op.adjoint(&op.apply(&u)?)?;
            let lap = div3(&grad3(&u))?;
            out.axpy(-1.0, &lap)?;
            Ok(out.into_vec())
        },
        &PowerIterOptions {
            seed,
            ..PowerIterOptions::default()
        },
    )
}

/// A fully assembled reconstruction problem, independent of `α`.
#[derive(Clone)]
pub struct Problem {
    pub variant: MethodVariant,
    pub op: Arc<dyn LinearOperator>,
    pub data: Volume,
    pub sigma_g: f64,
    pub bounds: BoxBounds,
    /// Box over which the Poisson term's conjugate is evaluated in the gap.
    pub kl_bounds: BoxBounds,
    /// Estimated `‖Σ Lᵢ*Lᵢ‖`, already inflated by [`NORM_SAFETY`].
    pub stacked_norm: f64,
    pub norm_estimate: NormEstimate,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("variant", &self.variant)
            .field("dims", &self.data.dims())
            .field("sigma_g", &self.sigma_g)
            .field("bounds", &self.bounds)
            .field("kl_bounds", &self.kl_bounds)
            .field("stacked_norm", &self.stacked_norm)
            .finish()
    }
}

/// Relative lower edge of the Poisson conjugate's box.
const KL_FLOOR: f64 = 1e-9;

impl Problem {
    pub fn dims(&self) -> Dims {
        self.data.dims()
    }

    pub fn n_terms(&self) -> usize {
        self.variant.n_terms()
    }

    /// Primal dimension: `2N` with the auxiliary `v`, else `N`.
    pub fn primal_len(&self) -> usize {
        match self.variant.fidelity() {
            FidelityKind::InfimalConvolution => 2 * self.dims().len(),
            FidelityKind::L2Only => self.dims().len(),
        }
    }

    /// `max f`, or 1 when the data has no positive value.
    pub fn data_scale(&self) -> f64 {
        let m = self.data.max();
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }
}

/// Wires the operator and data terms for `variant`.
pub fn build_problem(
    variant: MethodVariant,
    ops: &OperatorSet,
    data: Volume,
    sigma_g: f64,
    bounds: BoxBounds,
) -> Result<Problem> {
    build_problem_with_seed(variant, ops, data, sigma_g, bounds, SolverParams::default().seed)
}

pub fn build_problem_with_seed(
    variant: MethodVariant,
    ops: &OperatorSet,
    data: Volume,
    sigma_g: f64,
    bounds: BoxBounds,
    seed: u64,
) -> Result<Problem> {
    check_dims(ops.dims(), data.dims())?;
    if !data.is_finite() {
        return Err(Error::NonFinite("measured data".into()));
    }
    if !(sigma_g.is_finite() && sigma_g > 0.0) {
        return Err(Error::param(format!("sigma_g must be positive, got {sigma_g}")));
    }
    bounds.validate()?;
    let op = ops.operator(variant)?;
    let est = ops.norm_of(variant, seed)?;
    let u_block = est.value * NORM_SAFETY;
    let stacked_norm = match variant.fidelity() {
        // the v-block of Σ Lᵢ*Lᵢ is 2·Id
        FidelityKind::InfimalConvolution => u_block.max(2.0),
        FidelityKind::L2Only => u_block,
    };
    let reach = ops.row_max_of(variant)?.max(1.0);
    let kl_hi = bounds.hi * reach;
    let kl_bounds = BoxBounds::new(KL_FLOOR * kl_hi, kl_hi)?;
    Ok(Problem {
        variant,
        op,
        data,
        sigma_g,
        bounds,
        kl_bounds,
        stacked_norm,
        norm_estimate: est,
    })
}

/// Default box `[0, factor·max f]`.
pub fn default_bounds(data: &Volume, factor: f64) -> Result<BoxBounds> {
    let m = data.max();
    let hi = if m > 0.0 { factor * m } else { factor };
    BoxBounds::new(0.0, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Scaling;

    #[test]
    fn variant_tags_roundtrip() {
        for v in MethodVariant::ALL {
            assert_eq!(v.tag().parse::<MethodVariant>().unwrap(), v);
            let js = serde_json::to_string(&v).unwrap();
            assert_eq!(js, format!("\"{}\"", v.tag()));
        }
        assert!("LS-XX".parse::<MethodVariant>().is_err());
        assert_eq!(MethodVariant::LsIc.n_terms(), 3);
        assert_eq!(MethodVariant::PsfL2.n_terms(), 2);
    }

    #[test]
    fn params_validation() {
        assert!(SolverParams::default().validate().is_ok());
        let bad = SolverParams {
            rho: 2.0,
            ..SolverParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<SolverParams>(r#"{"alfa": 1}"#).is_err());
    }

    #[test]
    fn problem_shapes() {
        let d = Dims::new(6, 6, 4).unwrap();
        let id: Arc<dyn LinearOperator> = Arc::new(Scaling::identity(d));
        let ops = OperatorSet::new(Some(id.clone()), Some(id)).unwrap();
        let data = Volume::filled(d, 1.0);
        let b = BoxBounds::new(0.0, 10.0).unwrap();
        let ic = build_problem(MethodVariant::LsIc, &ops, data.clone(), 1.0, b).unwrap();
        assert_eq!(ic.n_terms(), 3);
        assert_eq!(ic.primal_len(), 2 * d.len());
        let l2 = build_problem(MethodVariant::PsfL2, &ops, data, 1.0, b).unwrap();
        assert_eq!(l2.n_terms(), 2);
        assert_eq!(l2.primal_len(), d.len());
        // identity plus the discrete Laplacian, whose top eigenvalue is below 12
        assert!(l2.norm_estimate.value > 9.0 && l2.norm_estimate.value <= 13.0 + 1e-9);
    }

    #[test]
    fn missing_operator_is_an_error() {
        let d = Dims::new(4, 4, 4).unwrap();
        let id: Arc<dyn LinearOperator> = Arc::new(Scaling::identity(d));
        let ops = OperatorSet::new(None, Some(id)).unwrap();
        let b = BoxBounds::new(0.0, 1.0).unwrap();
        assert!(build_problem(MethodVariant::LsIc, &ops, Volume::zeros(d), 1.0, b).is_err());
        assert!(OperatorSet::new(None, None).is_err());
    }
}
