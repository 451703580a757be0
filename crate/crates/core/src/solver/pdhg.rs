use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{Problem, SolverParams};
use crate::error::{Error, Result};
use crate::fidelity::{
    conj_box_slice, conj_kl_sum, div3, grad3, in_dual_ball, kl_sum, prox_conj_l1_inplace,
    prox_kl_scalar, tv_norm, Field3, FidelityKind,
};
use crate::volume::{check_dims, dot_slices, Volume};

/// Floor applied to the forward image inside the Poisson term, which can
/// carry round-off zeros.
const FORWARD_FLOOR: f64 = 1e-12;

/// Dual variables, one per composite term.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVars {
    /// Gaussian term: paired with `v`, or with `Au` when there is no `v`.
    pub gauss: Volume,
    /// Poisson term, the component paired with `Au`.
    pub kl_forward: Option<Volume>,
    /// Poisson term, the component paired with `v`.
    pub kl_aux: Option<Volume>,
    /// Total variation, paired with `∇u`.
    pub tv: Field3,
}

/// Primal and dual iterates.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub u: Volume,
    pub v: Option<Volume>,
    pub duals: DualVars,
}

impl SolverState {
    /// Primal variables start at the data clamped into the box, duals at zero.
    pub fn initial(problem: &Problem) -> Self {
        let d = problem.dims();
        let b = problem.bounds;
        let start = problem.data.clamp(b.lo, b.hi);
        let ic = problem.variant.fidelity() == FidelityKind::InfimalConvolution;
        SolverState {
            u: start.clone(),
            v: ic.then(|| start.clone()),
            duals: DualVars {
                gauss: Volume::zeros(d),
                kl_forward: ic.then(|| Volume::zeros(d)),
                kl_aux: ic.then(|| Volume::zeros(d)),
                tv: Field3::zeros(d),
            },
        }
    }

    fn check(&self, problem: &Problem) -> Result<()> {
        let d = problem.dims();
        let ic = problem.variant.fidelity() == FidelityKind::InfimalConvolution;
        check_dims(d, self.u.dims())?;
        check_dims(d, self.duals.gauss.dims())?;
        check_dims(d, self.duals.tv.dims())?;
        let parts = [&self.v, &self.duals.kl_forward, &self.duals.kl_aux];
        for p in parts {
            match (p, ic) {
                (Some(x), true) => check_dims(d, x.dims())?,
                (None, false) => {}
                _ => {
                    return Err(Error::param(format!(
                        "warm start does not match the {} splitting",
                        problem.variant
                    )))
                }
            }
        }
        Ok(())
    }

    /// The dual that meets the forward image `Au`.
    fn forward_dual(&self) -> &Volume {
        self.duals.kl_forward.as_ref().unwrap_or(&self.duals.gauss)
    }
}

/// Terms of the duality gap at one primal-dual pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GapBreakdown {
    /// `½‖f − v‖²` (or `½‖f − Au‖²` without `v`), not divided by `σ²`.
    pub half_sq_residual: f64,
    /// `D(v, Au)`, zero without `v`.
    pub kl: f64,
    /// `TV(u)`, not multiplied by `α`.
    pub tv: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// `gap / (N · max f)`.
    pub normalized: f64,
}

/// One entry of the per-run log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapRecord {
    pub iter: usize,
    pub normalized_gap: f64,
    pub half_sq_residual: f64,
    pub kl: f64,
    pub tv: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconResult {
    pub variant: super::MethodVariant,
    pub alpha: f64,
    #[serde(skip)]
    pub u: Volume,
    #[serde(skip)]
    pub v: Option<Volume>,
    #[serde(skip)]
    pub duals: DualVars,
    pub iterations: usize,
    /// Normalised gap at exit.
    pub gap: f64,
    pub converged: bool,
    pub final_terms: GapBreakdown,
    pub gap_history: Vec<GapRecord>,
    pub sigma: f64,
    pub tau: f64,
    pub stacked_norm: f64,
    pub wall_ms: f64,
}

impl ReconResult {
    pub fn state(&self) -> SolverState {
        SolverState {
            u: self.u.clone(),
            v: self.v.clone(),
            duals: self.duals.clone(),
        }
    }

    /// Gap history as a JSON array.
    pub fn log_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.gap_history)?)
    }
}

fn lincomb(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.par_iter().zip(y).map(|(&p, &q)| a * p + b * q).collect()
}

fn relax_inplace(rho: f64, target: &mut Volume, fresh: &Volume) {
    target
        .as_mut_slice()
        .par_iter_mut()
        .zip(fresh.as_slice())
        .for_each(|(t, &f)| *t = rho * f + (1.0 - rho) * *t);
}

fn relax_field(rho: f64, target: &mut Field3, fresh: &Field3) {
    for (t, f) in target.components_mut().into_iter().zip(fresh.components()) {
        relax_inplace(rho, t, f);
    }
}

fn vol(problem: &Problem, data: Vec<f64>) -> Volume {
    Volume::from_vec(problem.dims(), data).unwrap_or_else(|_| {
        // non-finite entries are caught by the gap check; keep them visible
        let mut z = Volume::zeros(problem.dims());
        z.as_mut_slice().fill(f64::NAN);
        z
    })
}

/// Dual prox of the Gaussian term `‖x − f‖²/(2s²)`:
/// `(z − σf)/(1 + σs²)`.
fn gauss_dual_prox(z: &mut [f64], f: &[f64], sigma: f64, s2: f64) {
    let c = 1.0 / (1.0 + sigma * s2);
    z.par_iter_mut()
        .zip(f)
        .for_each(|(zz, &ff)| *zz = (*zz - sigma * ff) * c);
}

/// Dual prox of the Poisson term through Moreau:
/// `z − σ·prox_{D/σ}(z/σ)`, applied to the pair in place.
fn kl_dual_prox(za: &mut [f64], zb: &mut [f64], sigma: f64) {
    let gamma = 1.0 / sigma;
    za.par_iter_mut().zip(zb.par_iter_mut()).for_each(|(a, b)| {
        let p = prox_kl_scalar(*a / sigma, *b / sigma, gamma);
        *a -= sigma * p.u;
        *b -= sigma * p.v;
    });
}

/// Gap at a feasible primal point with its forward image and the adjoint of
/// the forward dual already at hand.
fn gap_terms(
    problem: &Problem,
    alpha: f64,
    tv_kind: crate::fidelity::TvKind,
    s: &SolverState,
    au: &Volume,
    at_y: &Volume,
) -> Result<GapBreakdown> {
    let f = problem.data.as_slice();
    let s2 = problem.sigma_g * problem.sigma_g;
    let b = problem.bounds;
    let fitted = s.v.as_ref().unwrap_or(au);
    let resid = lincomb(1.0, fitted.as_slice(), -1.0, f);
    let half_sq = 0.5 * dot_slices(&resid, &resid);
    let kl = match &s.v {
        Some(v) => kl_sum(v.as_slice(), au.as_slice(), FORWARD_FLOOR),
        None => 0.0,
    };
    let tv = tv_norm(&s.u, tv_kind);
    let primal = half_sq / s2 + kl + alpha * tv;

    let y1 = s.duals.gauss.as_slice();
    let h1_conj = dot_slices(f, y1) + 0.5 * s2 * dot_slices(y1, y1);
    let div = div3(&s.duals.tv)?;
    // −Σ Lᵢ*yᵢ on the u block: −(A*y − div y_tv)
    let neg_ku = lincomb(-1.0, at_y.as_slice(), 1.0, div.as_slice());
    let mut dual = h1_conj + conj_box_slice(&neg_ku, b);
    if let (Some(ya), Some(yb)) = (&s.duals.kl_forward, &s.duals.kl_aux) {
        let neg_kv = lincomb(-1.0, y1, -1.0, yb.as_slice());
        dual += conj_box_slice(&neg_kv, b);
        dual += conj_kl_sum(ya.as_slice(), yb.as_slice(), problem.kl_bounds.lo, problem.kl_bounds.hi);
    }
    let slack = 1e-9 * alpha.max(f64::MIN_POSITIVE);
    if !in_dual_ball(&s.duals.tv, alpha, tv_kind, slack) {
        dual = f64::INFINITY;
    }
    let gap = primal + dual;
    let n = problem.dims().len() as f64;
    Ok(GapBreakdown {
        half_sq_residual: half_sq,
        kl,
        tv,
        primal,
        dual,
        gap,
        normalized: gap / (n * problem.data_scale()),
    })
}

/// Duality gap of `state` for `problem`, recomputing the operator terms.
pub fn primal_dual_gap(problem: &Problem, params: &SolverParams, state: &SolverState) -> Result<GapBreakdown> {
    state.check(problem)?;
    let au = problem.op.apply(&state.u)?;
    let at_y = problem.op.adjoint(state.forward_dual())?;
    gap_terms(problem, params.alpha, params.tv, state, &au, &at_y)
}

fn first_non_finite(s: &SolverState) -> Option<&'static str> {
    if !s.u.is_finite() {
        return Some("primal u");
    }
    if s.v.as_ref().is_some_and(|v| !v.is_finite()) {
        return Some("auxiliary v");
    }
    if !s.duals.gauss.is_finite() {
        return Some("Gaussian dual");
    }
    if s.duals.kl_forward.as_ref().is_some_and(|v| !v.is_finite())
        || s.duals.kl_aux.as_ref().is_some_and(|v| !v.is_finite())
    {
        return Some("Poisson dual");
    }
    if s.duals.tv.components().iter().any(|c| !c.is_finite()) {
        return Some("TV dual");
    }
    None
}

/// Runs the relaxed primal-dual iteration until the normalised gap reaches
/// `params.gap_tol` or `params.max_iters` iterations have been taken.
///
/// Each iteration applies the forward operator once (to the new primal
/// point) and its adjoint once (to the new dual point); the images of the
/// relaxed iterates follow by linearity. The gap is evaluated at the
/// un-relaxed pair, which is always feasible.
pub fn pdhg_run(problem: &Problem, params: &SolverParams, init: Option<&SolverState>) -> Result<ReconResult> {
    params.validate()?;
    let start = Instant::now();
    let mut state = match init {
        Some(s) => {
            s.check(problem)?;
            let mut s = s.clone();
            let b = problem.bounds;
            s.u = s.u.clamp(b.lo, b.hi);
            s.v = s.v.map(|v| v.clamp(b.lo, b.hi));
            s
        }
        None => SolverState::initial(problem),
    };
    let sigma = params.sigma;
    let tau = params.tau(problem.stacked_norm);
    let rho = params.rho;
    let alpha = params.alpha;
    debug_assert!(sigma * tau * problem.stacked_norm <= 1.0 + 1e-6);
    let s2 = problem.sigma_g * problem.sigma_g;
    let b = problem.bounds;
    let f = problem.data.as_slice();
    let op = problem.op.as_ref();
    let ic = problem.variant.fidelity() == FidelityKind::InfimalConvolution;

    let mut au = op.apply(&state.u)?;
    let mut at_y = op.adjoint(state.forward_dual())?;
    let mut history = Vec::new();
    let mut last: Option<(SolverState, GapBreakdown)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=params.max_iters {
        iterations = k;
        // 1. primal step and projection
        let div = div3(&state.duals.tv)?;
        let ut: Volume = {
            let g: Vec<f64> = state
                .u
                .as_slice()
                .par_iter()
                .zip(at_y.as_slice())
                .zip(div.as_slice())
                .map(|((&u, &a), &d)| b.clamp(u - tau * (a - d)))
                .collect();
            vol(problem, g)
        };
        let vt: Option<Volume> = state.v.as_ref().map(|v| {
            let yb = state.duals.kl_aux.as_ref().expect("IC duals present");
            let g: Vec<f64> = v
                .as_slice()
                .par_iter()
                .zip(state.duals.gauss.as_slice())
                .zip(yb.as_slice())
                .map(|((&v, &y1), &y2)| b.clamp(v - tau * (y1 + y2)))
                .collect();
            vol(problem, g)
        });
        let aut = op.apply(&ut)?;

        // 3. dual steps at the extrapolated point 2w̃ − w
        let mut yt = state.duals.clone();
        let bar_u = vol(problem, lincomb(2.0, ut.as_slice(), -1.0, state.u.as_slice()));
        let bar_au = lincomb(2.0, aut.as_slice(), -1.0, au.as_slice());
        if ic {
            let v = state.v.as_ref().expect("IC primal has v");
            let vt = vt.as_ref().expect("IC primal has v");
            let bar_v = lincomb(2.0, vt.as_slice(), -1.0, v.as_slice());
            for (y, &bv) in yt.gauss.as_mut_slice().iter_mut().zip(&bar_v) {
                *y += sigma * bv;
            }
            gauss_dual_prox(yt.gauss.as_mut_slice(), f, sigma, s2);
            let ya = yt.kl_forward.as_mut().expect("IC duals present");
            let yb = yt.kl_aux.as_mut().expect("IC duals present");
            ya.as_mut_slice()
                .par_iter_mut()
                .zip(&bar_au)
                .for_each(|(y, &x)| *y += sigma * x);
            yb.as_mut_slice()
                .par_iter_mut()
                .zip(&bar_v)
                .for_each(|(y, &x)| *y += sigma * x);
            kl_dual_prox(ya.as_mut_slice(), yb.as_mut_slice(), sigma);
        } else {
            yt.gauss
                .as_mut_slice()
                .par_iter_mut()
                .zip(&bar_au)
                .for_each(|(y, &x)| *y += sigma * x);
            gauss_dual_prox(yt.gauss.as_mut_slice(), f, sigma, s2);
        }
        let gbar = grad3(&bar_u);
        for (y, g) in yt.tv.components_mut().into_iter().zip(gbar.components()) {
            y.axpy(sigma, g)?;
        }
        prox_conj_l1_inplace(&mut yt.tv, alpha, params.tv)?;
        let at_yt = op.adjoint(yt.kl_forward.as_ref().unwrap_or(&yt.gauss))?;

        let tilde = SolverState {
            u: ut,
            v: vt,
            duals: yt,
        };
        let evaluate = k % params.gap_every == 0 || k == params.max_iters;
        if evaluate {
            if let Some(term) = first_non_finite(&tilde) {
                return Err(Error::Solver {
                    iter: k,
                    reason: format!("non-finite {term}"),
                });
            }
            let terms = gap_terms(problem, alpha, params.tv, &tilde, &aut, &at_yt)?;
            if terms.gap.is_nan() {
                return Err(Error::Solver {
                    iter: k,
                    reason: "duality gap is NaN".into(),
                });
            }
            history.push(GapRecord {
                iter: k,
                normalized_gap: terms.normalized,
                half_sq_residual: terms.half_sq_residual,
                kl: terms.kl,
                tv: terms.tv,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            log::debug!("iter {k}: normalised gap {:.3e}", terms.normalized);
            let done = terms.normalized <= params.gap_tol;
            last = Some((tilde.clone(), terms));
            if done {
                converged = true;
                break;
            }
        }

        // 2 and 4. relaxation, with the operator images carried along
        relax_inplace(rho, &mut state.u, &tilde.u);
        if let (Some(v), Some(vt)) = (state.v.as_mut(), tilde.v.as_ref()) {
            relax_inplace(rho, v, vt);
        }
        relax_inplace(rho, &mut state.duals.gauss, &tilde.duals.gauss);
        if let (Some(y), Some(t)) = (state.duals.kl_forward.as_mut(), tilde.duals.kl_forward.as_ref()) {
            relax_inplace(rho, y, t);
        }
        if let (Some(y), Some(t)) = (state.duals.kl_aux.as_mut(), tilde.duals.kl_aux.as_ref()) {
            relax_inplace(rho, y, t);
        }
        relax_field(rho, &mut state.duals.tv, &tilde.duals.tv);
        relax_inplace(rho, &mut au, &aut);
        relax_inplace(rho, &mut at_y, &at_yt);
    }

    let (fin, terms) = last.expect("gap evaluated on the final iteration");
    Ok(ReconResult {
        variant: problem.variant,
        alpha,
        u: fin.u,
        v: fin.v,
        duals: fin.duals,
        iterations,
        gap: terms.normalized,
        converged,
        final_terms: terms,
        gap_history: history,
        sigma,
        tau,
        stacked_norm: problem.stacked_norm,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
