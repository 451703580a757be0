//! Frozen reference values for the core crate's tests.
//!
//! Each file stores its inputs next to the oracle's output, so a test only
//! has to run the production code on the stored inputs.

use std::fs;
use std::path::{Path, PathBuf};

use lsdeconv::{Dims, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{grid_prox_kl, grid_sup_conj_kl, mc_poisson_deviance, naive_apply_lightsheet, naive_ssim3, GridSpec};

/// `crates/core/tests/fixtures` of this workspace.
pub fn default_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn random_volume(dims: Dims, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Volume {
    Volume::from_fn(dims, |_, _, _| rng.random_range(lo..hi))
}

fn forward_fixture() -> Value {
    let dims = Dims::new(8, 6, 4).expect("valid dims");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let l = random_volume(dims, &mut rng, 0.0, 1.0);
    let h = random_volume(dims, &mut rng, 0.0, 1.0);
    let u = random_volume(dims, &mut rng, 0.0, 1.0);
    let c = 1.7;
    let f = naive_apply_lightsheet(&l, &h, &u, c).expect("within size guard");
    json!({
        "dims": dims.as_array(),
        "normalization": c,
        "illumination": l.as_slice(),
        "kernel": h.as_slice(),
        "u": u.as_slice(),
        "f": f.as_slice(),
    })
}

const PROX_CASES: [(f64, f64, f64); 6] = [
    (2.0, 1.0, 0.5),
    (1.0, 1.0, 1.0),
    (0.5, 3.0, 2.0),
    (-1.0, 0.5, 0.3),
    (3.0, -2.0, 1.0),
    (0.1, 0.1, 10.0),
];

fn prox_fixture() -> Value {
    let step = 1e-4;
    let cases: Vec<Value> = PROX_CASES
        .iter()
        .map(|&(us, vs, g)| {
            let grid = GridSpec {
                lo: 0.0,
                hi: us.max(vs).max(0.0) + 1.0,
                step,
            };
            let (u, v) = grid_prox_kl(us, vs, g, grid);
            json!({"u_star": us, "v_star": vs, "gamma": g, "step": step, "u": u, "v": v})
        })
        .collect();
    json!({ "cases": cases })
}

fn conj_fixture() -> Value {
    let (lo, hi, step) = (0.01, 10.0, 1e-3);
    let cases: Vec<Value> = [(0.5, -0.2), (-1.0, 0.3), (0.9, -3.0), (-0.2, -0.1), (2.0, -1.0)]
        .iter()
        .map(|&(us, vs)| {
            let sup = grid_sup_conj_kl(us, vs, GridSpec { lo, hi, step });
            json!({"u_star": us, "v_star": vs, "lo": lo, "hi": hi, "step": step, "sup": sup})
        })
        .collect();
    json!({ "cases": cases })
}

fn ssim_fixture() -> Value {
    let dims = Dims::new(8, 8, 8).expect("valid dims");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_volume(dims, &mut rng, 0.0, 1.0);
    let y = Volume::from_fn(dims, |i, j, k| {
        0.8 * x.get(i, j, k) + 0.1 * ((i + 2 * j + 3 * k) % 4) as f64 + rng.random_range(0.0..0.1)
    });
    let (size, sigma) = (7, 1.5);
    let dr = y.max() - y.min();
    let value = naive_ssim3(&x, &y, size, sigma, dr).expect("window fits");
    json!({
        "dims": dims.as_array(),
        "window": size,
        "sigma": sigma,
        "dynamic_range": dr,
        "x": x.as_slice(),
        "y": y.as_slice(),
        "ssim": value,
    })
}

fn poisson_fixture() -> Value {
    let cases: Vec<Value> = [(10.0, 7u64), (100.0, 8), (1000.0, 9)]
        .iter()
        .map(|&(beta, seed)| {
            let draws = 100_000;
            let (mean, se) = mc_poisson_deviance(beta, draws, seed).expect("valid rate");
            json!({"beta": beta, "draws": draws, "seed": seed, "mean": mean, "std_err": se})
        })
        .collect();
    json!({ "cases": cases })
}

/// Recomputes every fixture into `dir` and returns the written paths.
pub fn regenerate(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        ("forward_naive.json", forward_fixture()),
        ("prox_kl_grid.json", prox_fixture()),
        ("conj_kl_grid.json", conj_fixture()),
        ("ssim_pair.json", ssim_fixture()),
        ("poisson_deviance.json", poisson_fixture()),
    ];
    let mut out = Vec::new();
    for (name, value) in files {
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(&value).map_err(std::io::Error::other)?;
        fs::write(&path, text + "\n")?;
        out.push(path);
    }
    Ok(out)
}
