//! Choice of the regularisation weight by the discrepancy principle.
//!
//! Fidelity values are measured in the units of the solver objective: the
//! Gaussian part is `½‖f − v‖²/σ²` and the Poisson part is `D(v, Au)`. With
//! `E‖w‖² = σ²N` for white Gaussian noise the Gaussian part of the true
//! solution sits near `N/2`, and each voxel contributes about `1/2` to the
//! Poisson part, so both bounds are `N/2` in these units.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::FidelityKind;
use crate::forward::LinearOperator;
use crate::solver::{pdhg_run, MethodVariant, OperatorSet, Problem, ReconResult, SolverParams, SolverState};
use crate::volume::Volume;

/// Expected Poisson divergence `γ = N/2` of a volume with `N` voxels.
pub fn poisson_kl_bound(data: &Volume) -> f64 {
    data.len() as f64 / 2.0
}

/// `F(y) = 2(y log(y/β) + β − y)`, twice the divergence of one count `y`
/// from its mean `β`.
pub fn poisson_deviance(y: f64, beta: f64) -> f64 {
    let ylog = if y == 0.0 { 0.0 } else { y * (y / beta).ln() };
    2.0 * (ylog + beta - y)
}

/// Sample mean and standard error of `F(Y)` for `Y ~ Poisson(β)`.
pub fn poisson_deviance_mc(beta: f64, draws: usize, seed: u64) -> Result<(f64, f64)> {
    if draws < 2 {
        return Err(Error::param("need at least two draws"));
    }
    let dist = Poisson::new(beta).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let f = poisson_deviance(dist.sample(&mut rng), beta);
        s += f;
        s2 += f * f;
    }
    let n = draws as f64;
    let mean = s / n;
    let var = (s2 - n * mean * mean) / (n - 1.0);
    Ok((mean, (var.max(0.0) / n).sqrt()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyMode {
    /// One bound on the sum of both fidelity parts.
    Combined,
    /// Each part below its own bound.
    #[default]
    PerFidelity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBounds {
    pub sigma_g: f64,
    /// Poisson bound, see [`poisson_kl_bound`].
    pub gamma: f64,
    /// Bound on the normalised Gaussian part, `N/2`.
    pub gauss: f64,
    #[serde(default = "default_tau")]
    pub tau_disc: f64,
    #[serde(default)]
    pub mode: DiscrepancyMode,
}

fn default_tau() -> f64 {
    1.01
}

impl NoiseBounds {
    /// Bounds for `data` with Gaussian noise level `sigma_g`.
    pub fn for_data(data: &Volume, sigma_g: f64, mode: DiscrepancyMode) -> Result<Self> {
        let b = NoiseBounds {
            sigma_g,
            gamma: poisson_kl_bound(data),
            gauss: data.len() as f64 / 2.0,
            tau_disc: default_tau(),
            mode,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_g", self.sigma_g), ("gamma", self.gamma), ("gauss", self.gauss)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.tau_disc.is_finite() && self.tau_disc > 1.0) {
            return Err(Error::param(format!("tau_disc must exceed 1, got {}", self.tau_disc)));
        }
        Ok(())
    }

    /// Combined bound `δ`.
    pub fn delta(&self) -> f64 {
        self.gauss + self.gamma
    }

    /// Whether `fid` meets the active criterion. Variants without a Poisson
    /// part are held to the Gaussian bound alone in per-fidelity mode.
    pub fn accepts(&self, fid: &FidelityValue) -> bool {
        let t = self.tau_disc;
        match self.mode {
            DiscrepancyMode::Combined => fid.combined <= t * self.delta(),
            DiscrepancyMode::PerFidelity => {
                fid.gauss <= t * self.gauss && (!fid.has_kl || fid.kl <= t * self.gamma)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FidelityValue {
    /// `½‖f − v‖²/σ²`, or `½‖f − Au‖²/σ²` without `v`.
    pub gauss: f64,
    /// `D(v, Au)`; zero without `v`.
    pub kl: f64,
    pub combined: f64,
    #[serde(skip)]
    pub has_kl: bool,
}

/// Forward images below this are treated as this value inside `D(v, ·)`.
const FORWARD_FLOOR: f64 = 1e-12;

/// Fidelity of a reconstruction, with `v` taken as given rather than
/// re-minimised.
pub fn eval_fidelity_at(
    u: &Volume,
    v: Option<&Volume>,
    f: &Volume,
    sigma_g: f64,
    variant: MethodVariant,
    ops: &OperatorSet,
) -> Result<FidelityValue> {
    let op = ops.operator(variant)?;
    fidelity_with_op(u, v, f, sigma_g, variant.fidelity(), op.as_ref())
}

fn fidelity_with_op(
    u: &Volume,
    v: Option<&Volume>,
    f: &Volume,
    sigma_g: f64,
    kind: FidelityKind,
    op: &dyn LinearOperator,
) -> Result<FidelityValue> {
    if !(sigma_g.is_finite() && sigma_g > 0.0) {
        return Err(Error::param(format!("sigma_g must be positive, got {sigma_g}")));
    }
    u.check_same_dims(f)?;
    let au = op.apply(u)?;
    let s2 = sigma_g * sigma_g;
    let (gauss, kl, has_kl) = match (kind, v) {
        (FidelityKind::InfimalConvolution, Some(v)) => {
            v.check_same_dims(f)?;
            let g = 0.5 * f.sub(v)?.norm_sq() / s2;
            let k = crate::fidelity::kl_sum(v.as_slice(), au.as_slice(), FORWARD_FLOOR);
            (g, k, true)
        }
        (FidelityKind::InfimalConvolution, None) => {
            return Err(Error::param("infimal-convolution fidelity needs the auxiliary v"))
        }
        (FidelityKind::L2Only, _) => (0.5 * f.sub(&au)?.norm_sq() / s2, 0.0, false),
    };
    Ok(FidelityValue {
        gauss,
        kl,
        combined: gauss + kl,
        has_kl,
    })
}

/// Log-spaced ascending grid: `per_decade` points per decade over
/// `decades` decades starting at `lo`, endpoints included.
pub fn alpha_grid(lo: f64, decades: usize, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && lo > 0.0) || decades == 0 || per_decade == 0 {
        return Err(Error::param("alpha grid needs lo > 0 and at least one decade and point"));
    }
    let n = decades * per_decade;
    Ok((0..=n)
        .map(|i| lo * 10f64.powf(i as f64 / per_decade as f64))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchOptions {
    /// Reuse the previous solution as the starting point.
    pub warm_start: bool,
    /// Stop at the first (largest) accepted weight.
    pub stop_early: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            warm_start: true,
            stop_early: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepEntry {
    pub alpha: f64,
    pub fidelity: FidelityValue,
    pub accepted: bool,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub variant: MethodVariant,
    pub bounds: NoiseBounds,
    /// In the order solved, largest weight first.
    pub entries: Vec<SweepEntry>,
    pub selected_alpha: f64,
    /// False when no grid point met the criterion and the smallest weight
    /// was returned instead.
    pub satisfied: bool,
}

impl SweepReport {
    /// Largest drop of the combined fidelity as the weight grows, relative
    /// to the larger value; zero for a monotone path.
    pub fn monotonicity_defect(&self) -> f64 {
        let mut by_alpha: Vec<&SweepEntry> = self.entries.iter().collect();
        by_alpha.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        by_alpha
            .windows(2)
            .map(|w| {
                let (lo, hi) = (w[0].fidelity.combined, w[1].fidelity.combined);
                ((lo - hi) / lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

pub struct Selection {
    pub alpha: f64,
    pub result: ReconResult,
    pub report: SweepReport,
}

/// Solves `problem` on `grid` from the largest weight down and returns the
/// largest weight whose reconstruction meets the discrepancy criterion.
///
/// `observe` sees every solve, for example to score it against a known
/// truth. The fidelity of each entry is recomputed from the returned
/// volumes, not taken from the solver log.
pub fn discrepancy_search(
    problem: &Problem,
    params: &SolverParams,
    bounds: &NoiseBounds,
    grid: &[f64],
    opts: SearchOptions,
    mut observe: impl FnMut(&SweepEntry, &ReconResult),
) -> Result<Selection> {
    bounds.validate()?;
    if grid.len() < 2 {
        return Err(Error::param("alpha grid needs at least two points"));
    }
    if grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("alpha grid must be positive and strictly ascending"));
    }
    let mut entries = Vec::with_capacity(grid.len());
    let mut warm: Option<SolverState> = None;
    let mut chosen: Option<ReconResult> = None;
    let mut last: Option<ReconResult> = None;
    for &alpha in grid.iter().rev() {
        let p = SolverParams {
            alpha,
            ..params.clone()
        };
        let res = pdhg_run(problem, &p, warm.as_ref())?;
        let fid = fidelity_with_op(
            &res.u,
            res.v.as_ref(),
            &problem.data,
            problem.sigma_g,
            problem.variant.fidelity(),
            problem.op.as_ref(),
        )?;
        let entry = SweepEntry {
            alpha,
            fidelity: fid,
            accepted: bounds.accepts(&fid),
            iterations: res.iterations,
            gap: res.gap,
            converged: res.converged,
            wall_ms: res.wall_ms,
        };
        log::info!(
            "alpha {alpha:.4e}: gauss {:.4e} kl {:.4e} accepted {} ({} iterations)",
            fid.gauss,
            fid.kl,
            entry.accepted,
            res.iterations
        );
        observe(&entry, &res);
        let accepted = entry.accepted;
        entries.push(entry);
        if opts.warm_start {
            warm = Some(res.state());
        }
        if accepted && chosen.is_none() {
            chosen = Some(res);
            if opts.stop_early {
                break;
            }
        } else {
            last = Some(res);
        }
    }
    let (result, satisfied) = match chosen {
        Some(r) => (r, true),
        None => {
            let r = last.ok_or_else(|| Error::param("empty sweep"))?;
            log::warn!(
                "no weight on the grid meets the discrepancy bound; returning the smallest, {:.4e}",
                r.alpha
            );
            (r, false)
        }
    };
    let report = SweepReport {
        variant: problem.variant,
        bounds: *bounds,
        entries,
        selected_alpha: result.alpha,
        satisfied,
    };
    Ok(Selection {
        alpha: result.alpha,
        result,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::BoxBounds;
    use crate::forward::Scaling;
    use crate::solver::build_problem;
    use crate::volume::Dims;
    use std::sync::Arc;

    fn identity_ops(d: Dims) -> OperatorSet {
        let id: Arc<dyn LinearOperator> = Arc::new(Scaling::identity(d));
        OperatorSet::new(Some(id.clone()), Some(id)).unwrap()
    }

    #[test]
    fn bound_is_half_voxel_count() {
        let v = Volume::zeros(Dims::new(10, 10, 10).unwrap());
        assert_eq!(poisson_kl_bound(&v), 500.0);
    }

    #[test]
    fn deviance_mean_near_one() {
        let (m, se) = poisson_deviance_mc(1000.0, 100_000, 7).unwrap();
        assert!((m - 1.0).abs() <= 5.0 / 1000.0 + 3.0 * se, "mean {m} se {se}");
        let (m100, se100) = poisson_deviance_mc(100.0, 100_000, 8).unwrap();
        assert!((m100 - 1.0).abs() <= 5.0 / 100.0 + 3.0 * se100);
        // the 1/β correction is visible at small counts
        let (m10, _) = poisson_deviance_mc(10.0, 100_000, 9).unwrap();
        assert!((m10 - 1.0).abs() > (m - 1.0).abs());
    }

    #[test]
    fn fidelity_values() {
        let d = Dims::new(4, 3, 2).unwrap();
        let ops = identity_ops(d);
        let f = Volume::from_fn(d, |i, j, k| 1.0 + (i + j + k) as f64);
        let z = eval_fidelity_at(&f, Some(&f), &f, 2.0, MethodVariant::LsIc, &ops).unwrap();
        assert_eq!((z.gauss, z.kl, z.combined), (0.0, 0.0, 0.0));
        let u2 = f.scaled(2.0);
        let r = eval_fidelity_at(&u2, Some(&f), &f, 2.0, MethodVariant::LsIc, &ops).unwrap();
        let expect = crate::fidelity::kl_div(&f, &u2).unwrap();
        assert!((r.kl - expect).abs() <= 1e-14 * expect);
        assert_eq!(r.combined, r.gauss + r.kl);
        let l2 = eval_fidelity_at(&u2, None, &f, 2.0, MethodVariant::LsL2, &ops).unwrap();
        assert!((l2.gauss - 0.5 * f.norm_sq() / 4.0).abs() < 1e-12);
        assert_eq!(l2.kl, 0.0);
        assert!(eval_fidelity_at(&f, None, &f, 1.0, MethodVariant::PsfIc, &ops).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = alpha_grid(0.01, 3, 8).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g[24] - 10.0).abs() < 1e-12);
        assert!((g[8] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn acceptance_rules() {
        let b = NoiseBounds {
            sigma_g: 1.0,
            gamma: 10.0,
            gauss: 10.0,
            tau_disc: 1.01,
            mode: DiscrepancyMode::PerFidelity,
        };
        let fv = |g: f64, k: f64| FidelityValue {
            gauss: g,
            kl: k,
            combined: g + k,
            has_kl: true,
        };
        assert!(b.accepts(&fv(10.0, 10.0)));
        assert!(!b.accepts(&fv(1.0, 10.2)));
        let c = NoiseBounds {
            mode: DiscrepancyMode::Combined,
            ..b
        };
        assert!(c.accepts(&fv(1.0, 19.0)));
        assert!(NoiseBounds { tau_disc: 1.0, ..b }.validate().is_err());
    }

    /// Noiseless data: only the smallest weight can fit it.
    #[test]
    fn noiseless_picks_smallest() {
        let d = Dims::new(6, 6, 4).unwrap();
        let ops = identity_ops(d);
        let f = Volume::from_fn(d, |i, _, _| if i < 3 { 10.0 } else { 50.0 });
        let problem = build_problem(MethodVariant::LsL2, &ops, f.clone(), 1.0, BoxBounds::new(0.0, 100.0).unwrap()).unwrap();
        let bounds = NoiseBounds {
            sigma_g: 1e-6,
            gamma: 1e-9,
            gauss: 1e-9,
            tau_disc: 1.01,
            mode: DiscrepancyMode::PerFidelity,
        };
        let params = SolverParams {
            sigma: 1e-2,
            max_iters: 300,
            ..SolverParams::default()
        };
        let mut seen = 0;
        let sel = discrepancy_search(
            &problem,
            &params,
            &bounds,
            &[0.1, 1.0, 10.0],
            SearchOptions::default(),
            |_, _| seen += 1,
        )
        .unwrap();
        assert_eq!(seen, 3);
        assert!(!sel.report.satisfied);
        assert_eq!(sel.alpha, 0.1);
        assert_eq!(sel.result.alpha, 0.1);
        assert!(sel.report.monotonicity_defect() < 1e-3);
    }

    #[test]
    fn rejects_bad_grid() {
        let d = Dims::new(4, 4, 2).unwrap();
        let ops = identity_ops(d);
        let f = Volume::filled(d, 1.0);
        let problem = build_problem(MethodVariant::LsL2, &ops, f.clone(), 1.0, BoxBounds::new(0.0, 10.0).unwrap()).unwrap();
        let b = NoiseBounds::for_data(&f, 1.0, DiscrepancyMode::PerFidelity).unwrap();
        let p = SolverParams::default();
        assert!(discrepancy_search(&problem, &p, &b, &[1.0], SearchOptions::default(), |_, _| {}).is_err());
        assert!(discrepancy_search(&problem, &p, &b, &[2.0, 1.0], SearchOptions::default(), |_, _| {}).is_err());
    }
}
