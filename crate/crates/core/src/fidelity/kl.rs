//! Kullback-Leibler divergence `D(v, u) = Σ u − v + v·log(v/u)` and the
//! two pieces the solver needs from it: the joint proximal map and the convex
//! conjugate restricted to a box.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Volume, REDUCTION_CHUNK};

/// Pointwise divergence term with the conventions `0·log 0 = 0` and `+∞`
/// when `v > 0` meets `u = 0`.
#[inline]
pub fn kl_term(v: f64, u: f64) -> f64 {
    if v == 0.0 {
        u
    } else if u == 0.0 {
        f64::INFINITY
    } else {
        u - v + v * (v / u).ln()
    }
}

/// `D(v, u)`. Both inputs must be non-negative.
pub fn kl_div(v: &Volume, u: &Volume) -> Result<f64> {
    v.check_same_dims(u)?;
    if v.as_slice().iter().chain(u.as_slice()).any(|&x| !(x >= 0.0)) {
        return Err(Error::param("kl_div requires non-negative finite inputs"));
    }
    Ok(kl_sum(v.as_slice(), u.as_slice(), 0.0))
}

/// Sum of `kl_term(v, max(u, u_floor))`, chunked for a deterministic order.
pub(crate) fn kl_sum(v: &[f64], u: &[f64], u_floor: f64) -> f64 {
    let partial: Vec<f64> = v
        .par_chunks(REDUCTION_CHUNK)
        .zip(u.par_chunks(REDUCTION_CHUNK))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&vv, &uu)| kl_term(vv.max(0.0), uu.max(u_floor)))
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// Outcome of one scalar proximal solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlProx {
    pub u: f64,
    pub v: f64,
    /// Newton iterations taken.
    pub newton_steps: u32,
    /// Bisection steps taken after Newton left the bracket or stalled.
    pub bisection_steps: u32,
}

const NEWTON_BUDGET: u32 = 50;
const BISECTION_BUDGET: u32 = 200;
const START_FLOOR: f64 = 1e-6;

/// `g(v) = γ − γe^{−(v−v*)/γ} + v·e^{(v−v*)/γ} − u*` and `g'(v)`.
///
/// Its root in `v` is the `v`-part of the proximal point; `g` is strictly
/// increasing on `v > 0`.
#[inline]
pub fn prox_kl_objective(v: f64, u_star: f64, v_star: f64, gamma: f64) -> (f64, f64) {
    let x = (v - v_star) / gamma;
    let em = (-x).exp();
    // v·e^x evaluated in log space so tiny v with large x stays finite
    let vex = if v > 0.0 { (v.ln() + x).exp() } else { 0.0 };
    let ex = x.exp();
    let g = gamma - gamma * em + vex - u_star;
    let dg = em + ex + vex / gamma;
    (g, dg)
}

/// Joint proximal map of `γ·D(v, u)` at `(u*, v*)`:
/// `argmin γD(v,u) + ½(u−u*)² + ½(v−v*)²`.
///
/// Safeguarded Newton on `g` keeps a sign bracket and bisects whenever a step
/// leaves it. When `g(0) ≥ 0` the minimiser sits on the corner `(0, 0)`.
pub fn prox_kl_scalar(u_star: f64, v_star: f64, gamma: f64) -> KlProx {
    debug_assert!(gamma > 0.0);
    // g(0+) = γ(1 − e^{v*/γ}) − u*
    let g0 = gamma * (1.0 - (v_star / gamma).exp()) - u_star;
    if g0 >= 0.0 {
        return KlProx {
            u: 0.0,
            v: 0.0,
            newton_steps: 0,
            bisection_steps: 0,
        };
    }
    let tol = 1e-12 * u_star.abs().max(1.0);
    // g(v) ≥ v − u* once v ≥ max(v*, 0), so this is a valid upper bracket
    let mut lo = 0.0;
    let mut hi = u_star.max(v_star).max(0.0) + 1.0;
    let mut v = v_star.max(gamma * START_FLOOR).min(hi);
    let mut newton_steps = 0;
    let mut bisection_steps = 0;
    loop {
        let (g, dg) = prox_kl_objective(v, u_star, v_star, gamma);
        if g.abs() <= tol {
            break;
        }
        if g > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
        let newton = v - g / dg;
        let use_newton = newton_steps < NEWTON_BUDGET
            && g.is_finite()
            && dg.is_finite()
            && newton > lo
            && newton < hi;
        if use_newton {
            newton_steps += 1;
            if newton == v {
                break;
            }
            v = newton;
        } else {
            if bisection_steps >= BISECTION_BUDGET {
                break;
            }
            bisection_steps += 1;
            v = 0.5 * (lo + hi);
        }
    }
    let u = (v.ln() + (v - v_star) / gamma).exp();
    KlProx {
        u,
        v,
        newton_steps,
        bisection_steps,
    }
}

/// Residuals of the two stationarity equations at `(u, v)`:
/// `γ(1 − v/u) + u − u*` and `γ·log(v/u) + v − v*`.
pub fn prox_kl_residual(u: f64, v: f64, u_star: f64, v_star: f64, gamma: f64) -> (f64, f64) {
    (
        gamma * (1.0 - v / u) + u - u_star,
        gamma * (v / u).ln() + v - v_star,
    )
}

/// Elementwise joint proximal map of `γ·D`; returns `(u, v)`.
pub fn prox_kl_joint(u_star: &Volume, v_star: &Volume, gamma: f64) -> Result<(Volume, Volume)> {
    u_star.check_same_dims(v_star)?;
    check_gamma(gamma)?;
    let mut u = u_star.zeros_like();
    let mut v = v_star.zeros_like();
    u.as_mut_slice()
        .par_iter_mut()
        .zip(v.as_mut_slice().par_iter_mut())
        .zip(u_star.as_slice().par_iter().zip(v_star.as_slice()))
        .for_each(|((uo, vo), (&us, &vs))| {
            let p = prox_kl_scalar(us, vs, gamma);
            *uo = p.u;
            *vo = p.v;
        });
    Ok((u, v))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("prox step must be positive, got {gamma}")))
    }
}

/// `Ψ(v, u) = u·u* + v·v* − u + v − v·log(v/u)` for positive `u, v`.
#[inline]
pub fn kl_conj_objective(v: f64, u: f64, u_star: f64, v_star: f64) -> f64 {
    u * u_star + v * v_star - u + v - v * (v / u).ln()
}

/// `sup Ψ(v, u)` over `u, v ∈ [lo, hi]`, by enumerating the KKT cases.
///
/// `Ψ` is jointly concave. For fixed `u` the best `v` is `u·e^{v*}`, for fixed
/// `v` the best `u` is `v/(1−u*)` (or the upper bound when `u* ≥ 1`). Every
/// KKT point either has a variable on a bound or lies on the ray
/// `v = u·e^{v*}` with `e^{v*} = 1−u*`, where `Ψ ≡ 0`; the latter value is
/// also reached at the ray's end on the boundary, so bound cases suffice.
pub fn conj_kl_scalar(u_star: f64, v_star: f64, lo: f64, hi: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut consider = |v: f64, u: f64| {
        if (lo..=hi).contains(&v) && (lo..=hi).contains(&u) {
            best = best.max(kl_conj_objective(v, u, u_star, v_star));
        }
    };
    let ev = v_star.exp();
    for b in [lo, hi] {
        // four corners
        consider(lo, b);
        consider(hi, b);
        // u on a bound, v interior (clamped so the boundary optimum is also covered)
        consider((b * ev).clamp(lo, hi), b);
        // v on a bound, u interior
        let u = if u_star < 1.0 { b / (1.0 - u_star) } else { hi };
        consider(b, u.clamp(lo, hi));
    }
    best
}

/// Sum over voxels of [`conj_kl_scalar`].
pub fn conj_kl_joint(u_star: &Volume, v_star: &Volume, lo: f64, hi: f64) -> Result<f64> {
    u_star.check_same_dims(v_star)?;
    check_kl_box(lo, hi)?;
    Ok(conj_kl_sum(u_star.as_slice(), v_star.as_slice(), lo, hi))
}

fn check_kl_box(lo: f64, hi: f64) -> Result<()> {
    if lo > 0.0 && hi > lo && hi.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "KL conjugate box needs 0 < lo < hi, got [{lo}, {hi}]"
        )))
    }
}

pub(crate) fn conj_kl_sum(u_star: &[f64], v_star: &[f64], lo: f64, hi: f64) -> f64 {
    let partial: Vec<f64> = u_star
        .par_chunks(REDUCTION_CHUNK)
        .zip(v_star.par_chunks(REDUCTION_CHUNK))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&us, &vs)| conj_kl_scalar(us, vs, lo, hi))
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use proptest::prelude::*;

    #[test]
    fn kl_examples() {
        let d = Dims::new(2, 1, 1).unwrap();
        let v = Volume::from_vec(d, vec![1.0, 2.0]).unwrap();
        let u = Volume::from_vec(d, vec![2.0, 1.0]).unwrap();
        assert!((kl_div(&v, &u).unwrap() - std::f64::consts::LN_2).abs() < 1e-14);
        assert_eq!(kl_div(&v, &v).unwrap(), 0.0);
        assert_eq!(kl_div(&Volume::zeros(d), &u).unwrap(), 3.0);
        assert_eq!(kl_div(&u, &Volume::zeros(d)).unwrap(), f64::INFINITY);
        assert!(kl_div(&u.scaled(-1.0), &u).is_err());
    }

    #[test]
    fn prox_at_equal_point_is_fixed() {
        for a in [0.3, 1.0, 7.5] {
            for gamma in [0.1, 1.0, 20.0] {
                let p = prox_kl_scalar(a, a, gamma);
                assert!((p.u - a).abs() < 1e-12 && (p.v - a).abs() < 1e-12, "{a} {gamma} {p:?}");
            }
        }
    }

    #[test]
    fn prox_corner_case() {
        // u* well below zero drives both variables to zero
        let p = prox_kl_scalar(-5.0, -1.0, 1.0);
        assert_eq!((p.u, p.v), (0.0, 0.0));
    }

    #[test]
    fn prox_extreme_inputs_stay_finite() {
        for (us, vs, g) in [(1e-3, -1e3, 0.1), (1e4, 1e4, 1e4), (3.0, 50.0, 0.01), (1e6, -2.0, 1e4)] {
            let p = prox_kl_scalar(us, vs, g);
            assert!(p.u.is_finite() && p.v.is_finite() && p.u >= 0.0 && p.v >= 0.0, "{p:?}");
        }
    }

    #[test]
    fn conj_corner_for_negative_duals() {
        let (lo, hi) = (0.01, 10.0);
        let c = conj_kl_scalar(-100.0, -100.0, lo, hi);
        let expect = lo * -100.0 + lo * -100.0 - lo + lo;
        assert!((c - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn g_is_increasing_and_brackets(us in -2.0..4.0f64, vs in -2.0..4.0f64, gamma in 0.1..10.0f64) {
            let g0 = gamma * (1.0 - (vs / gamma).exp()) - us;
            let hi = us.max(vs).max(0.0) + 1.0;
            prop_assert!(prox_kl_objective(hi, us, vs, gamma).0 > 0.0);
            if g0 < 0.0 {
                let mut prev = f64::NEG_INFINITY;
                for i in 1..50 {
                    let g = prox_kl_objective(hi * i as f64 / 50.0, us, vs, gamma).0;
                    prop_assert!(g > prev);
                    prev = g;
                }
            }
        }

        #[test]
        fn prox_satisfies_stationarity(us in -2.0..4.0f64, vs in -2.0..4.0f64, gamma in 0.1..10.0f64) {
            let p = prox_kl_scalar(us, vs, gamma);
            if p.v > 0.0 {
                let (r1, r2) = prox_kl_residual(p.u, p.v, us, vs, gamma);
                prop_assert!(r1.abs() <= 1e-10 && r2.abs() <= 1e-10, "{:?} {} {}", p, r1, r2);
            }
        }

        #[test]
        fn prox_firmly_nonexpansive(a in prop::array::uniform4(-2.0..4.0f64), gamma in 0.1..10.0f64) {
            let p = prox_kl_scalar(a[0], a[1], gamma);
            let q = prox_kl_scalar(a[2], a[3], gamma);
            let (du, dv) = (p.u - q.u, p.v - q.v);
            let (eu, ev) = (a[0] - a[2], a[1] - a[3]);
            // ‖Pa − Pb‖² ≤ ⟨Pa − Pb, a − b⟩
            prop_assert!(du * du + dv * dv <= du * eu + dv * ev + 1e-9);
        }

        #[test]
        fn fenchel_young(us in -3.0..3.0f64, vs in -3.0..3.0f64, u in 0.01..10.0f64, v in 0.01..10.0f64) {
            let c = conj_kl_scalar(us, vs, 0.01, 10.0);
            prop_assert!(kl_conj_objective(v, u, us, vs) <= c + 1e-9 * c.abs().max(1.0));
        }

        #[test]
        fn pinsker(raw in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..12)) {
            let sv: f64 = raw.iter().map(|p| p.0).sum();
            let sf: f64 = raw.iter().map(|p| p.1).sum();
            prop_assume!(sv > 1e-6 && sf > 1e-6);
            let (mut kl, mut l1) = (0.0, 0.0);
            for &(a, b) in &raw {
                let (v, f) = (a / sv, b / sf);
                kl += kl_term(v, f);
                l1 += (v - f).abs();
            }
            prop_assert!(kl >= 0.5 * l1 * l1 - 1e-12);
        }

        #[test]
        fn joint_convexity(a in prop::array::uniform4(0.01..5.0f64), lam in 0.0..1.0f64) {
            let mix = kl_term(lam * a[0] + (1.0 - lam) * a[2], lam * a[1] + (1.0 - lam) * a[3]);
            let sep = lam * kl_term(a[0], a[1]) + (1.0 - lam) * kl_term(a[2], a[3]);
            prop_assert!(mix <= sep + 1e-12);
        }
    }
}
