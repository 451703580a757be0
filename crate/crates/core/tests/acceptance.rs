//! End-to-end acceptance checks. Each check prints one PASS/FAIL line.
//!
//! Runs as a plain binary so the verdict lines are always visible. Numeric
//! arguments restrict the run to those checks, e.g.
//! `cargo test --test acceptance -- 3 4`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use lsdeconv::cli::{cmd_deconvolve, cmd_simulate, simulate, RunDir, Simulation};
use lsdeconv::config::{DeconvolveConfig, InputFiles, PsfModel, SimulateConfig};
use lsdeconv::fidelity::{
    conj_kl_scalar, div3, grad3, kl_div, prox_kl_residual, prox_kl_scalar, Field3,
};
use lsdeconv::forward::{
    estimate_op_norm, Boundary, ConvolutionOperator, LightsheetOperator, LinearOperator, PowerIterOptions,
};
use lsdeconv::metrics::{self, SsimWindow};
use lsdeconv::optics::{detection_psf, lightsheet_profile, OpticalConfig, ZernikeCoeffs, N_ZERNIKE};
use lsdeconv::phantom::{NoiseSpec, PhantomSpec};
use lsdeconv::solver::{
    build_problem, default_bounds, pdhg_run, MethodVariant, OperatorSet, ReconResult, SolverParams,
};
use lsdeconv::tuning::{
    alpha_grid, discrepancy_search, poisson_deviance_mc, DiscrepancyMode, NoiseBounds, SearchOptions,
    SweepEntry,
};
use lsdeconv::{dot, Dims, Volume};
use lsdeconv_oracles::{
    dense_materialize, grid_prox_kl, kl_pointwise, grid_sup_conj_kl, largest_singular_value, naive_apply_lightsheet,
    project_kl_conj_domain, GridSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one check: pass flag and a one-line summary of the numbers.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn dims(nx: usize, ny: usize, nz: usize) -> Dims {
    Dims::new(nx, ny, nz).unwrap()
}

fn random_volume(d: Dims, rng: &mut ChaCha8Rng) -> Volume {
    Volume::from_fn(d, |_, _, _| rng.random_range(-1.0..1.0))
}

fn optics(d: [usize; 3]) -> OpticalConfig {
    OpticalConfig {
        dims: d,
        ..OpticalConfig::default()
    }
}

fn random_coeffs(rng: &mut ChaCha8Rng) -> ZernikeCoeffs {
    let mut c = [0.0; N_ZERNIKE];
    c.iter_mut().for_each(|x| *x = rng.random_range(-3.0..=3.0));
    ZernikeCoeffs::new(c).unwrap()
}

/// `|⟨Au, f⟩ − ⟨u, A*f⟩| / (‖u‖‖f‖)` over `pairs` random pairs, worst case.
fn adjoint_defect(op: &dyn LinearOperator, pairs: usize, rng: &mut ChaCha8Rng) -> f64 {
    let d = op.dims();
    (0..pairs)
        .map(|_| {
            let u = random_volume(d, rng);
            let f = random_volume(d, rng);
            let lhs = dot(&op.apply(&u).unwrap(), &f).unwrap();
            let rhs = dot(&u, &op.adjoint(&f).unwrap()).unwrap();
            (lhs - rhs).abs() / (u.norm() * f.norm())
        })
        .fold(0.0, f64::max)
}

fn random_field(d: Dims, rng: &mut ChaCha8Rng) -> Field3 {
    Field3 {
        x: random_volume(d, rng),
        y: random_volume(d, rng),
        z: random_volume(d, rng),
    }
}

fn adjoint_consistency() -> Verdict {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = optics([12, 12, 6]);
    let d = cfg.dims().unwrap();
    let h = detection_psf(&cfg, &random_coeffs(&mut rng), 0.0).unwrap();
    let l = lightsheet_profile(&cfg).unwrap();
    let mut worst: Vec<(String, f64)> = Vec::new();
    for b in [Boundary::ZeroPad, Boundary::Circular] {
        let ls = LightsheetOperator::new(l.clone(), h.clone(), b).unwrap();
        worst.push((format!("light-sheet/{b:?}"), adjoint_defect(&ls, 50, &mut rng)));
        let conv = ConvolutionOperator::new(h.clone(), b).unwrap();
        worst.push((format!("convolution/{b:?}"), adjoint_defect(&conv, 50, &mut rng)));
    }

    // gradient against minus the divergence
    let grad = (0..50)
        .map(|_| {
            let u = random_volume(d, &mut rng);
            let p = random_field(d, &mut rng);
            let lhs = grad3(&u).dot(&p).unwrap();
            let rhs = -dot(&u, &div3(&p).unwrap()).unwrap();
            (lhs - rhs).abs() / (u.norm() * p.norm_sq().sqrt())
        })
        .fold(0.0, f64::max);
    worst.push(("gradient".into(), grad));

    // the data block (u, v) ↦ (Lu, v) and the full stack
    // (u, v) ↦ (v, (Lu, v), ∇u) the solver iterates with
    let ls = LightsheetOperator::new(l, h, Boundary::ZeroPad).unwrap();
    let (mut block, mut stack) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (u, v) = (random_volume(d, &mut rng), random_volume(d, &mut rng));
        let (a, b) = (random_volume(d, &mut rng), random_volume(d, &mut rng));
        let (y1, p) = (random_volume(d, &mut rng), random_field(d, &mut rng));
        let lu = ls.apply(&u).unwrap();
        let lta = ls.adjoint(&a).unwrap();
        let x_norm = (u.norm_sq() + v.norm_sq()).sqrt();
        let blk_lhs = dot(&lu, &a).unwrap() + dot(&v, &b).unwrap();
        let blk_rhs = dot(&u, &lta).unwrap() + dot(&v, &b).unwrap();
        let ab_norm = (a.norm_sq() + b.norm_sq()).sqrt();
        block = block.max((blk_lhs - blk_rhs).abs() / (x_norm * ab_norm));

        let stk_lhs = dot(&v, &y1).unwrap() + blk_lhs + grad3(&u).dot(&p).unwrap();
        let ku = lta.sub(&div3(&p).unwrap()).unwrap();
        let kv = y1.add(&b).unwrap();
        let stk_rhs = dot(&u, &ku).unwrap() + dot(&v, &kv).unwrap();
        let y_norm = (y1.norm_sq() + a.norm_sq() + b.norm_sq() + p.norm_sq()).sqrt();
        stack = stack.max((stk_lhs - stk_rhs).abs() / (x_norm * y_norm));
    }
    worst.push(("data block".into(), block));
    worst.push(("full stack".into(), stack));
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let (name, _) = worst.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    verdict(
        max <= TOL,
        format!("worst relative defect {max:.2e} ({name}) over {} operators, tol {TOL:.0e}", worst.len()),
    )
}

fn forward_matches_naive() -> Verdict {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = optics([16, 16, 8]);
    let d = cfg.dims().unwrap();
    let l = lightsheet_profile(&cfg).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let h = detection_psf(&cfg, &random_coeffs(&mut rng), 0.0).unwrap();
        let op = LightsheetOperator::new(l.clone(), h.clone(), Boundary::ZeroPad).unwrap();
        let u = Volume::from_fn(d, |_, _, _| rng.random_range(0.0..1.0));
        let fast = op.apply(&u).unwrap();
        let slow = naive_apply_lightsheet(&l, &h, &u, op.normalization()).unwrap();
        worst = worst.max(fast.sub(&slow).unwrap().norm() / slow.norm());
    }
    verdict(
        worst <= TOL,
        format!("worst relative difference {worst:.2e} over 50 instances, tol {TOL:.0e}"),
    )
}

fn prox_matches_grid() -> Verdict {
    const STEP: f64 = 1e-4;
    const RESIDUAL_TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_dist, mut worst_res, mut corners) = (0.0f64, 0.0f64, 0);
    // beyond-tolerance cases where the solver's point still scores lower
    // than the best lattice point
    let (mut far, mut far_but_lower) = (0, 0);
    for _ in 0..200 {
        let us = rng.random_range(-2.0..=4.0);
        let vs = rng.random_range(-2.0..=4.0);
        let g = rng.random_range(0.1..=10.0);
        let p = prox_kl_scalar(us, vs, g);
        let grid = GridSpec {
            lo: 0.0,
            hi: us.max(vs).max(0.0) + 1.0,
            step: STEP,
        };
        let (gu, gv) = grid_prox_kl(us, vs, g, grid);
        let dist = (p.u - gu).abs().max((p.v - gv).abs()) / STEP;
        worst_dist = worst_dist.max(dist);
        if dist > 2.0 {
            far += 1;
            let obj = |u: f64, v: f64| kl_pointwise(v, u) + ((u - us).powi(2) + (v - vs).powi(2)) / (2.0 * g);
            if obj(p.u, p.v) <= obj(gu, gv) {
                far_but_lower += 1;
            }
        }
        if p.u > 0.0 && p.v > 0.0 {
            let (r1, r2) = prox_kl_residual(p.u, p.v, us, vs, g);
            worst_res = worst_res.max(r1.abs().max(r2.abs()));
        } else {
            corners += 1;
        }
    }
    verdict(
        worst_dist <= 2.0 && worst_res <= RESIDUAL_TOL,
        format!(
            "worst distance {worst_dist:.2} grid steps (tol 2), worst stationarity residual {worst_res:.2e} \
             (tol {RESIDUAL_TOL:.0e}), {corners} corner solutions; {far} beyond 2 steps, of which \
             {far_but_lower} have a lower objective than the lattice minimiser"
        ),
    )
}

fn conjugate_consistency() -> Verdict {
    const MOREAU_TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // prox of γD plus γ times the projection onto the conjugate's domain at
    // x/γ must give back x; the projection is computed independently
    let mut moreau = 0.0f64;
    for _ in 0..200 {
        let us = rng.random_range(-2.0..=4.0);
        let vs = rng.random_range(-2.0..=4.0);
        let g = rng.random_range(0.1..=10.0);
        let p = prox_kl_scalar(us, vs, g);
        let (wa, wb) = project_kl_conj_domain(us / g, vs / g);
        let (ra, rb) = (us - p.u - g * wa, vs - p.v - g * wb);
        moreau = moreau.max(ra.hypot(rb) / us.hypot(vs).max(1.0));
    }

    let (lo, hi, step) = (0.01, 10.0, 1e-3);
    let (mut worst_ratio, mut below) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let us = rng.random_range(-2.0..=1.5);
        let vs = rng.random_range(-3.0..=2.0);
        let exact = conj_kl_scalar(us, vs, lo, hi);
        let grid = grid_sup_conj_kl(us, vs, GridSpec { lo, hi, step });
        // gradient bound of u·u* + v·v* − D(v, u) over the box
        let lip = (us.abs() + 1.0 + hi / lo).hypot(vs.abs() + (hi / lo).ln());
        worst_ratio = worst_ratio.max((exact - grid).abs() / (lip * step));
        // the exact supremum can never fall below a lattice value
        below = below.max(grid - exact);
    }
    verdict(
        moreau <= MOREAU_TOL && worst_ratio <= 1.0 && below <= 1e-9,
        format!(
            "Moreau residual {moreau:.2e} (tol {MOREAU_TOL:.0e}); conjugate vs grid sup worst \
             {worst_ratio:.2e} of Lipschitz·step, exact below lattice by at most {below:.1e}"
        ),
    )
}

/// Desk-scale test problem: default optics (32×32×16), peak 2000, σ 10.
fn desk_problem(phantom: PhantomSpec) -> Simulation {
    let noise = NoiseSpec {
        sigma_g: 10.0,
        peak: 2000.0,
        seed: 1,
    };
    simulate(&PsfModel::default(), &phantom, &noise, Boundary::ZeroPad).unwrap().0
}

fn steps() -> PhantomSpec {
    PhantomSpec::Steps { levels: 4 }
}

fn beads() -> PhantomSpec {
    PhantomSpec::Beads {
        grid: [4, 4, 4],
        radius: 1.5,
    }
}

const SIGMA_G: f64 = 10.0;
const DUAL_STEP: f64 = 1e-3;

fn desk_params(alpha: f64, max_iters: usize) -> SolverParams {
    SolverParams {
        alpha,
        sigma: DUAL_STEP,
        max_iters,
        ..SolverParams::default()
    }
}

fn solver_convergence() -> Verdict {
    let sim = desk_problem(steps());
    let bounds = default_bounds(&sim.data, 10.0).unwrap();
    let problem = build_problem(MethodVariant::LsIc, &sim.ops, sim.data.clone(), SIGMA_G, bounds).unwrap();
    let res = pdhg_run(&problem, &desk_params(0.1, 10_000), None).unwrap();
    let mut running = f64::INFINITY;
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for rec in &res.gap_history {
        running = running.min(rec.normalized_gap);
        monotone &= running <= prev;
        prev = running;
    }
    let ok = res.converged && res.gap <= 1e-6 && res.iterations <= 10_000 && monotone;
    verdict(
        ok,
        format!(
            "LS-IC steps 32x32x16: gap {:.2e} after {} iterations ({:.1} s), running minimum {}",
            res.gap,
            res.iterations,
            res.wall_ms / 1e3,
            if monotone { "non-increasing" } else { "INCREASES" }
        ),
    )
}

/// One solve of a sweep, scored against the truth.
#[derive(Clone, Debug)]
struct Scored {
    alpha: f64,
    l2: f64,
    ssim: f64,
    accepted: bool,
}

struct Sweep {
    rows: Vec<Scored>,
    selected_alpha: f64,
    satisfied: bool,
}

impl Sweep {
    fn best_l2(&self) -> &Scored {
        self.rows.iter().min_by(|a, b| a.l2.total_cmp(&b.l2)).unwrap()
    }

    fn best_ssim(&self) -> &Scored {
        self.rows.iter().max_by(|a, b| a.ssim.total_cmp(&b.ssim)).unwrap()
    }

    fn selected(&self) -> &Scored {
        self.rows.iter().find(|r| r.alpha == self.selected_alpha).unwrap()
    }
}

/// Warm-started sweep over `grid`, largest weight first, scoring every
/// solve and recording which ones meet the per-fidelity discrepancy test.
fn sweep(sim: &Simulation, variant: MethodVariant, grid: &[f64], max_iters: usize) -> Sweep {
    let bounds = default_bounds(&sim.data, 10.0).unwrap();
    let problem = build_problem(variant, &sim.ops, sim.data.clone(), SIGMA_G, bounds).unwrap();
    let noise = NoiseBounds::for_data(&sim.data, SIGMA_G, DiscrepancyMode::PerFidelity).unwrap();
    let mut rows = Vec::new();
    let opts = SearchOptions {
        warm_start: true,
        stop_early: false,
    };
    let sel = discrepancy_search(
        &problem,
        &desk_params(1.0, max_iters),
        &noise,
        grid,
        opts,
        |e: &SweepEntry, r: &ReconResult| {
            let m = metrics::evaluate(&r.u, &sim.truth, SsimWindow::default()).unwrap();
            rows.push(Scored {
                alpha: e.alpha,
                l2: m.l2_normalized,
                ssim: m.ssim,
                accepted: e.accepted,
            });
        },
    )
    .unwrap();
    Sweep {
        rows,
        selected_alpha: sel.alpha,
        satisfied: sel.report.satisfied,
    }
}

/// LS-IC on steps over 25 weights; shared by the trend and discrepancy checks.
fn steps_ls_ic_sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let sim = desk_problem(steps());
        sweep(&sim, MethodVariant::LsIc, &alpha_grid(0.003, 3, 8).unwrap(), 10_000)
    })
}

fn comparative_trend() -> Verdict {
    // the L2 variants converge slowly; their sweeps are capped
    const CAPPED: usize = 1500;
    let coarse = alpha_grid(0.001, 4, 2).unwrap();
    let bead_sim = desk_problem(beads());
    let ls_ic_beads = sweep(&bead_sim, MethodVariant::LsIc, &coarse, CAPPED);
    let psf_l2_beads = sweep(&bead_sim, MethodVariant::PsfL2, &coarse, CAPPED);
    let steps_sim = desk_problem(steps());
    let ls_l2_steps = sweep(&steps_sim, MethodVariant::LsL2, &alpha_grid(0.003, 3, 4).unwrap(), CAPPED);
    let ls_ic_steps = steps_ls_ic_sweep();

    let (a, b) = (ls_ic_beads.best_l2(), psf_l2_beads.best_l2());
    let (c, e) = (ls_ic_steps.best_ssim(), ls_l2_steps.best_ssim());
    let beads_ok = a.l2 <= 0.8 * b.l2;
    let steps_ok = c.ssim >= e.ssim - 0.02;
    verdict(
        beads_ok && steps_ok,
        format!(
            "beads best l2 LS-IC {:.4} (alpha {:.3}) vs PSF-L2 {:.4} (alpha {:.3}), need ratio <= 0.8, got {:.3}; \
             steps best SSIM LS-IC {:.4} vs LS-L2 {:.4}, need >= LS-L2 - 0.02",
            a.l2,
            a.alpha,
            b.l2,
            b.alpha,
            a.l2 / b.l2,
            c.ssim,
            e.ssim
        ),
    )
}

fn discrepancy_sanity() -> Verdict {
    let s = steps_ls_ic_sweep();
    let best = s.best_l2();
    let chosen = s.selected();
    let ratio = chosen.l2 / best.l2;
    let (mean, se) = poisson_deviance_mc(1000.0, 100_000, 2024).unwrap();
    let mc_ok = (0.98..=1.02).contains(&mean);
    let accepted = s.rows.iter().filter(|r| r.accepted).count();
    verdict(
        s.satisfied && ratio <= 2.0 && mc_ok,
        format!(
            "selected alpha {:.4} l2 {:.4} vs optimal alpha {:.4} l2 {:.4}, ratio {ratio:.2} (tol 2, \
             {accepted}/{} weights accepted); deviance mean at 1000 counts {mean:.4} ± {se:.4}",
            chosen.alpha,
            chosen.l2,
            best.alpha,
            best.l2,
            s.rows.len()
        ),
    )
}

fn pinsker_inequality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=64);
        let d = dims(n, 1, 1);
        let mut draw = || {
            let raw: Vec<f64> = (0..n).map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0f64).ln()).collect();
            let s: f64 = raw.iter().sum();
            Volume::from_vec(d, raw.into_iter().map(|x| x / s).collect()).unwrap()
        };
        let (v, f) = (draw(), draw());
        let slack = kl_div(&v, &f).unwrap() - 0.5 * v.sub(&f).unwrap().norm_l1().powi(2);
        min_slack = min_slack.min(slack);
        if slack < -1e-12 {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("{violations} violations in 10000 pairs, smallest slack {min_slack:.2e}"),
    )
}

fn norm_certificate() -> Verdict {
    let cfg = optics([16, 16, 4]);
    let d = cfg.dims().unwrap();
    let h = detection_psf(&cfg, &ZernikeCoeffs::fitted_objective(), 0.0).unwrap();
    let l = lightsheet_profile(&cfg).unwrap();
    let raw = LightsheetOperator::with_normalization(l.clone(), h.clone(), 1.0, Boundary::ZeroPad).unwrap();
    let svd = largest_singular_value(&dense_materialize(d, |e| raw.apply(e).unwrap()).unwrap());
    let est = estimate_op_norm(&raw, &PowerIterOptions::default()).unwrap().value;
    let rel = (est - svd).abs() / svd;

    let mut unit = Vec::new();
    for b in [Boundary::ZeroPad, Boundary::Circular] {
        let op = LightsheetOperator::new(l.clone(), h.clone(), b).unwrap();
        unit.push(largest_singular_value(&dense_materialize(d, |e| op.apply(e).unwrap()).unwrap()));
    }
    let unit_dev = unit.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    verdict(
        rel <= 1e-3 && unit_dev <= 1e-3,
        format!(
            "power iteration {est:.6} vs SVD {svd:.6} (rel {rel:.1e}, tol 1e-3); normalised operators \
             {:.6} / {:.6} (tol 1 ± 1e-3)",
            unit[0], unit[1]
        ),
    )
}

fn constant_sheet_reduction() -> Verdict {
    let cfg = optics([8, 8, 4]);
    let d = cfg.dims().unwrap();
    let h = detection_psf(&cfg, &ZernikeCoeffs::zero(), 0.0).unwrap();
    let c = 0.7;
    let ls = LightsheetOperator::with_normalization(Volume::filled(d, c), h.clone(), c, Boundary::ZeroPad).unwrap();
    let conv = ConvolutionOperator::new(h, Boundary::ZeroPad).unwrap();
    let ops = OperatorSet::new(Some(Arc::new(ls)), Some(Arc::new(conv))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let truth = Volume::from_fn(d, |i, j, _| if (i + j) % 5 < 2 { 100.0 } else { 10.0 });
    let clean = ops.operator(MethodVariant::PsfL2).unwrap().apply(&truth).unwrap();
    let data = clean.map(|x| x.max(0.0)).zip_map(&random_volume(d, &mut rng), |a, n| a + 3.0 * n).unwrap();
    let params = SolverParams {
        alpha: 0.05,
        sigma: DUAL_STEP,
        max_iters: 2000,
        gap_tol: 0.0,
        ..SolverParams::default()
    };
    let solve = |v: MethodVariant| {
        let bounds = default_bounds(&data, 10.0).unwrap();
        let p = build_problem(v, &ops, data.clone(), 3.0, bounds).unwrap();
        pdhg_run(&p, &params, None).unwrap().u
    };
    let (a, b) = (solve(MethodVariant::LsL2), solve(MethodVariant::PsfL2));
    let rel = a.sub(&b).unwrap().norm() / b.norm();
    verdict(
        rel <= 1e-6,
        format!("LS-L2 vs PSF-L2 with a constant sheet: relative difference {rel:.2e} (tol 1e-6)"),
    )
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SimulateConfig {
        model: PsfModel {
            optics: optics([16, 16, 8]),
            ..PsfModel::default()
        },
        phantom: steps(),
        noise: NoiseSpec {
            sigma_g: 10.0,
            peak: 2000.0,
            seed: 42,
        },
        boundary: Boundary::ZeroPad,
    };
    let sim_dirs: Vec<RunDir> = ["sim_a", "sim_b"]
        .iter()
        .map(|n| {
            let dir = RunDir::at(tmp.path().join(n)).unwrap();
            cmd_simulate(&cfg, &dir).unwrap();
            dir
        })
        .collect();
    let mut differing = Vec::new();
    let mut compared = 0;
    for entry in std::fs::read_dir(sim_dirs[0].path()).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_string_lossy().into_owned();
        if name.ends_with(".raw") || name.ends_with(".json") {
            compared += 1;
            let a = std::fs::read(sim_dirs[0].file(&name)).unwrap();
            let b = std::fs::read(sim_dirs[1].file(&name)).unwrap();
            if a != b {
                differing.push(name);
            }
        }
    }

    let dcfg = DeconvolveConfig {
        inputs: InputFiles {
            data: sim_dirs[0].file("f"),
            kernel: sim_dirs[0].file("h"),
            illumination: Some(sim_dirs[0].file("l")),
            truth: Some(sim_dirs[0].file("truth")),
        },
        variant: MethodVariant::LsIc,
        sigma_g: 10.0,
        solver: desk_params(0.1, 300),
        box_factor: 10.0,
        boundary: Boundary::ZeroPad,
        ssim: SsimWindow::default(),
    };
    let runs: Vec<ReconResult> = ["dec_a", "dec_b"]
        .iter()
        .map(|n| cmd_deconvolve(&dcfg, &RunDir::at(tmp.path().join(n)).unwrap()).unwrap())
        .collect();
    // wall-clock times aside, every logged number must repeat exactly
    let strip = |r: &ReconResult| {
        r.gap_history
            .iter()
            .map(|g| (g.iter, g.normalized_gap.to_bits(), g.half_sq_residual.to_bits(), g.kl.to_bits(), g.tv.to_bits()))
            .collect::<Vec<_>>()
    };
    let same_log = strip(&runs[0]) == strip(&runs[1]) && !runs[0].gap_history.is_empty();
    let same_u = std::fs::read(tmp.path().join("dec_a/u.raw")).unwrap() == std::fs::read(tmp.path().join("dec_b/u.raw")).unwrap();
    verdict(
        differing.is_empty() && compared > 0 && same_log && same_u,
        format!(
            "simulate: {compared} files compared, {} differ {differing:?}; deconvolve: gap history {} \
             ({} records), output volume {}",
            differing.len(),
            if same_log { "identical" } else { "DIFFERS" },
            runs[0].gap_history.len(),
            if same_u { "identical" } else { "DIFFERS" }
        ),
    )
}

type Check = (u32, &'static str, fn() -> Verdict);

const CHECKS: [Check; 11] = [
    (1, "adjoint consistency", adjoint_consistency),
    (2, "forward model vs naive sum", forward_matches_naive),
    (3, "KL prox vs grid search", prox_matches_grid),
    (4, "conjugate and Moreau identity", conjugate_consistency),
    (5, "solver convergence", solver_convergence),
    (6, "comparative trend", comparative_trend),
    (7, "discrepancy principle", discrepancy_sanity),
    (8, "Pinsker inequality", pinsker_inequality),
    (9, "operator norm certificate", norm_certificate),
    (10, "constant-sheet reduction", constant_sheet_reduction),
    (11, "reproducibility", reproducibility),
];

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, check) in CHECKS {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{id:02}] {tag} {name} ({:.1} s): {}", t.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} check(s) failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
    println!("acceptance: all checks passed");
}
