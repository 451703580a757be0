//! Production code against reference values frozen by `lsdeconv-oracle
//! regen-fixtures`.

use std::path::Path;

use lsdeconv::fidelity::{conj_kl_scalar, prox_kl_scalar};
use lsdeconv::forward::{Boundary, LightsheetOperator, LinearOperator};
use lsdeconv::metrics::{ssim3, SsimWindow};
use lsdeconv::tuning::poisson_deviance_mc;
use lsdeconv::{Dims, Volume};
use serde_json::Value;

fn load(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key}"))
}

fn volume(v: &Value, key: &str, dims: Dims) -> Volume {
    let data = v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    Volume::from_vec(dims, data).unwrap()
}

fn dims_of(v: &Value) -> Dims {
    let d: Vec<usize> = v["dims"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
    Dims::new(d[0], d[1], d[2]).unwrap()
}

#[test]
fn forward_matches_frozen_direct_sum() {
    let fx = load("forward_naive.json");
    let d = dims_of(&fx);
    let op = LightsheetOperator::with_normalization(
        volume(&fx, "illumination", d),
        volume(&fx, "kernel", d),
        num(&fx, "normalization"),
        Boundary::ZeroPad,
    )
    .unwrap();
    let expect = volume(&fx, "f", d);
    let got = op.apply(&volume(&fx, "u", d)).unwrap();
    let rel = got.sub(&expect).unwrap().norm() / expect.norm();
    assert!(rel <= 1e-12, "relative difference {rel:e}");
}

fn prox_objective(u: f64, v: f64, us: f64, vs: f64, gamma: f64) -> f64 {
    let kl = v - u + if u > 0.0 { u * (u / v).ln() } else { 0.0 };
    gamma * kl + 0.5 * ((u - us).powi(2) + (v - vs).powi(2))
}

#[test]
fn prox_matches_frozen_grid_minimisers() {
    for case in load("prox_kl_grid.json")["cases"].as_array().unwrap() {
        let (us, vs, gamma) = (num(case, "u_star"), num(case, "v_star"), num(case, "gamma"));
        let p = prox_kl_scalar(us, vs, gamma);
        let (gu, gv) = (num(case, "u"), num(case, "v"));
        let dist = (p.u - gu).abs().max((p.v - gv).abs());
        let ours = prox_objective(p.u, p.v, us, vs, gamma);
        let lattice = prox_objective(gu, gv, us, vs, gamma);
        // near u = 0 the objective is flat enough that the lattice point can
        // sit a few steps off; ours must then be strictly better
        let ok = dist <= 2.0 * num(case, "step") || (ours < lattice && dist <= 1e-2);
        assert!(ok, "{case}: got ({}, {}), objective {ours} vs {lattice}", p.u, p.v);
    }
}

#[test]
fn conjugate_matches_frozen_grid_sup() {
    for case in load("conj_kl_grid.json")["cases"].as_array().unwrap() {
        let (us, vs) = (num(case, "u_star"), num(case, "v_star"));
        let (lo, hi, step) = (num(case, "lo"), num(case, "hi"), num(case, "step"));
        let exact = conj_kl_scalar(us, vs, lo, hi);
        let grid = num(case, "sup");
        let lip = (us.abs() + 1.0 + hi / lo).hypot(vs.abs() + (hi / lo).ln());
        assert!(exact >= grid - 1e-12, "{case}: {exact} below lattice value");
        assert!(exact - grid <= lip * step, "{case}: {exact}");
    }
}

#[test]
fn ssim_matches_frozen_window_sums() {
    let fx = load("ssim_pair.json");
    let d = dims_of(&fx);
    let window = SsimWindow {
        size: fx["window"].as_u64().unwrap() as usize,
        sigma: num(&fx, "sigma"),
    };
    let got = ssim3(&volume(&fx, "x", d), &volume(&fx, "y", d), window, num(&fx, "dynamic_range")).unwrap();
    let expect = num(&fx, "ssim");
    assert!((got - expect).abs() <= 1e-10, "{got} vs {expect}");
}

#[test]
fn deviance_mean_agrees_with_frozen_sampler() {
    for case in load("poisson_deviance.json")["cases"].as_array().unwrap() {
        let beta = num(case, "beta");
        let draws = case["draws"].as_u64().unwrap() as usize;
        let (mean, se) = poisson_deviance_mc(beta, draws, case["seed"].as_u64().unwrap()).unwrap();
        let (ref_mean, ref_se) = (num(case, "mean"), num(case, "std_err"));
        // independent runs of the same experiment: agree within sampling error
        assert!((mean - ref_mean).abs() <= 4.0 * se.hypot(ref_se), "beta {beta}: {mean} vs {ref_mean}");
        if beta >= 1000.0 {
            assert!((0.98..=1.02).contains(&ref_mean));
        }
    }
}
