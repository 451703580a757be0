//! The `lsdeconv` command line.
//!
//! Each command reads one JSON config, creates a fresh timestamped run
//! directory under `--out`, copies the resolved config into it as
//! `config.json` and writes every output there. Volumes are stored as
//! 64-bit payloads so a run can feed the next one without loss.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{
    load_config, AlphaSelection, CommandConfig, CompareConfig, DeconvolveConfig, InputFiles, PsfConfig, PsfModel,
    SimulateConfig, TuneConfig,
};
use crate::error::{Error, Result};
use crate::fidelity::BoxBounds;
use crate::forward::{Boundary, ConvolutionOperator, LightsheetOperator, LinearOperator};
use crate::metrics::{self, MetricReport, SsimWindow};
use crate::optics::{fit_psf, fit_residual, PsfFitResult};
use crate::phantom::{corrupt, NoiseSpec, PhantomSpec};
use crate::solver::{
    build_problem_with_seed, default_bounds, pdhg_run, MethodVariant, OperatorSet, ReconResult, SolverParams,
};
use crate::tuning::{discrepancy_search, NoiseBounds, SearchOptions, SweepReport};
use crate::volume::{load_volume, mip, save_volume_as, Axis, Dtype, Volume};

pub const EXIT_OK: i32 = 0;
/// Any failure not covered by the codes below.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::MalformedHeader { .. } | Error::TruncatedPayload { .. } | Error::Tiff(_) => EXIT_IO,
        Error::Solver { .. } => EXIT_SOLVER,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "lsdeconv", version, about = "Light-sheet PSF synthesis, simulation and deconvolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise the detection PSF and light-sheet profile, optionally fit a bead.
    Psf(CommonArgs),
    /// Build a phantom, image it and add mixed Poisson-Gaussian noise.
    Simulate(CommonArgs),
    /// Reconstruct a volume with one method variant.
    Deconvolve(CommonArgs),
    /// Simulate once and score several variants over a range of weights.
    Compare(CommonArgs),
    /// Choose the regularisation weight by the discrepancy principle.
    Tune(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Parent directory of the run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// A fresh output directory named `<command>-<timestamp>`.
#[derive(Clone, Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(parent: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let mut n = 1;
        loop {
            let name = if n == 1 {
                format!("{command}-{stamp}")
            } else {
                format!("{command}-{stamp}-{n}")
            };
            let path = parent.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
    }

    /// Uses an existing directory as is.
    pub fn at(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunDir { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let p = self.file(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn write_volume(&self, name: &str, v: &Volume) -> Result<()> {
        save_volume_as(v, self.file(name), Dtype::F64)
    }

    /// Projections along z and y as `<name>_mip_xy.png` and `<name>_mip_xz.png`.
    pub fn write_mips(&self, name: &str, v: &Volume) -> Result<()> {
        mip(v, Axis::Z).save_png(self.file(&format!("{name}_mip_xy.png")))?;
        mip(v, Axis::Y).save_png(self.file(&format!("{name}_mip_xz.png")))
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let common = match &cli.command {
        Command::Psf(a) | Command::Simulate(a) | Command::Deconvolve(a) | Command::Compare(a) | Command::Tune(a) => a,
    };
    init_logging(common.verbose);
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match dispatch(&cli.command) {
        Ok(dir) => {
            println!("{}", dir.path().display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn prepare<T: CommandConfig>(args: &CommonArgs, name: &str) -> Result<(T, RunDir)> {
    let cfg: T = load_config(&args.config)?;
    let dir = RunDir::create(&args.out, name)?;
    dir.write_json("config.json", &cfg.clone().into_run_config())?;
    Ok((cfg, dir))
}

fn dispatch(cmd: &Command) -> Result<RunDir> {
    match cmd {
        Command::Psf(a) => {
            let (cfg, dir) = prepare::<PsfConfig>(a, "psf")?;
            cmd_psf(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Simulate(a) => {
            let (cfg, dir) = prepare::<SimulateConfig>(a, "simulate")?;
            cmd_simulate(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Deconvolve(a) => {
            let (cfg, dir) = prepare::<DeconvolveConfig>(a, "deconvolve")?;
            cmd_deconvolve(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Compare(a) => {
            let (cfg, dir) = prepare::<CompareConfig>(a, "compare")?;
            cmd_compare(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Tune(a) => {
            let (cfg, dir) = prepare::<TuneConfig>(a, "tune")?;
            cmd_tune(&cfg, &dir)?;
            Ok(dir)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PsfSummary {
    pub coeffs: crate::optics::ZernikeCoeffs,
    pub blur_sigma: f64,
    pub kernel_sum: f64,
    pub illumination_max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub initial_residual: f64,
    pub fit: PsfFitResult,
}

/// Writes `h` and `l` with their projections, and `fit.json` when a bead is
/// configured.
pub fn cmd_psf(cfg: &PsfConfig, dir: &RunDir) -> Result<(PsfSummary, Option<FitReport>)> {
    let h = cfg.model.detection()?;
    let l = cfg.model.illumination()?;
    dir.write_volume("h", &h)?;
    dir.write_volume("l", &l)?;
    dir.write_mips("h", &h)?;
    dir.write_mips("l", &l)?;
    let summary = PsfSummary {
        coeffs: cfg.model.coeffs.resolve(),
        blur_sigma: cfg.model.blur_sigma,
        kernel_sum: h.sum(),
        illumination_max: l.max(),
    };
    dir.write_json("psf.json", &summary)?;
    let fit = match &cfg.fit {
        None => None,
        Some(fc) => {
            let bead = load_volume(&fc.bead)?;
            let optics = &cfg.model.optics;
            let init = PsfFitResult::initial(fc.init_coeffs.resolve(), fc.init_sigma);
            let initial_residual = fit_residual(&bead, fc.bead_radius_um, optics, &init.coeffs, init.sigma)?;
            let fit = fit_psf(&bead, fc.bead_radius_um, optics, &init, &fc.options)?;
            let fitted = crate::optics::detection_psf(optics, &fit.coeffs, fit.sigma)?;
            dir.write_volume("h_fit", &fitted)?;
            dir.write_mips("h_fit", &fitted)?;
            let report = FitReport { initial_residual, fit };
            dir.write_json("fit.json", &report)?;
            Some(report)
        }
    };
    Ok((summary, fit))
}

/// Everything a simulated experiment produces.
pub struct Simulation {
    /// Phantom with values in `[0, 1]`.
    pub u0: Volume,
    /// Phantom on the intensity scale of the data, `scale · u0`.
    pub truth: Volume,
    /// `L u0`.
    pub f_clean: Volume,
    pub data: Volume,
    pub scale: f64,
    pub ops: OperatorSet,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationSummary {
    pub phantom: PhantomSpec,
    pub noise: NoiseSpec,
    pub scale: f64,
    pub seed: u64,
    pub operator_normalization: f64,
    pub data_max: f64,
}

/// Builds the phantom, images it through the light-sheet model and adds
/// noise. Both forward models are kept for later reconstructions.
pub fn simulate(model: &PsfModel, phantom: &PhantomSpec, noise: &NoiseSpec, boundary: Boundary) -> Result<(Simulation, f64)> {
    let dims = model.optics.dims()?;
    let pitch = model.optics.pitch();
    let h = model.detection()?;
    let l = model.illumination()?;
    let ls = LightsheetOperator::new(l, h.clone(), boundary)?;
    let norm = ls.normalization();
    let conv = ConvolutionOperator::new(h, boundary)?;
    let ops = OperatorSet::new(Some(Arc::new(ls)), Some(Arc::new(conv)))?;
    let u0 = phantom.build(dims)?.with_pitch(pitch);
    // FFT round-off leaves tiny negative values where the image is dark
    let f_clean = ops
        .operator(MethodVariant::LsIc)?
        .apply(&u0)?
        .map(|v| v.max(0.0))
        .with_pitch(pitch);
    let noisy = corrupt(&f_clean, noise)?;
    Ok((
        Simulation {
            truth: u0.scaled(noisy.scale),
            u0,
            f_clean,
            data: noisy.data.with_pitch(pitch),
            scale: noisy.scale,
            ops,
        },
        norm,
    ))
}

/// Writes `u0`, `truth`, `f_clean`, `f`, `h`, `l` and `simulation.json`.
pub fn cmd_simulate(cfg: &SimulateConfig, dir: &RunDir) -> Result<SimulationSummary> {
    let (sim, norm) = simulate(&cfg.model, &cfg.phantom, &cfg.noise, cfg.boundary)?;
    dir.write_volume("u0", &sim.u0)?;
    dir.write_volume("truth", &sim.truth)?;
    dir.write_volume("f_clean", &sim.f_clean)?;
    dir.write_volume("f", &sim.data)?;
    dir.write_volume("h", &cfg.model.detection()?)?;
    dir.write_volume("l", &cfg.model.illumination()?)?;
    dir.write_mips("u0", &sim.u0)?;
    dir.write_mips("f", &sim.data)?;
    let summary = SimulationSummary {
        phantom: cfg.phantom.clone(),
        noise: cfg.noise.clone(),
        scale: sim.scale,
        seed: cfg.noise.seed,
        operator_normalization: norm,
        data_max: sim.data.max(),
    };
    dir.write_json("simulation.json", &summary)?;
    Ok(summary)
}

struct LoadedInputs {
    data: Volume,
    truth: Option<Volume>,
    ops: OperatorSet,
}

fn load_inputs(inputs: &InputFiles, variant: MethodVariant, boundary: Boundary) -> Result<LoadedInputs> {
    let data = load_volume(&inputs.data)?;
    let kernel = load_volume(&inputs.kernel)?;
    let truth = inputs.truth.as_ref().map(load_volume).transpose()?;
    let ops = if variant.uses_lightsheet() {
        let path = inputs
            .illumination
            .as_ref()
            .ok_or_else(|| Error::Config("light-sheet variants need inputs.illumination".into()))?;
        let l = load_volume(path)?;
        OperatorSet::new(Some(Arc::new(LightsheetOperator::new(l, kernel, boundary)?)), None)?
    } else {
        OperatorSet::new(None, Some(Arc::new(ConvolutionOperator::new(kernel, boundary)?)))?
    };
    crate::volume::check_dims(ops.dims(), data.dims())?;
    if let Some(t) = &truth {
        data.check_same_dims(t)?;
    }
    Ok(LoadedInputs { data, truth, ops })
}

#[derive(Clone, Debug, Serialize)]
pub struct DeconvolveReport<'a> {
    pub result: &'a ReconResult,
    pub bounds: BoxBounds,
    pub metrics: Option<MetricReport>,
}

/// Reconstructs `inputs.data` and writes `u` (and `v`), `gap_history.json`,
/// `result.json` and projections.
pub fn cmd_deconvolve(cfg: &DeconvolveConfig, dir: &RunDir) -> Result<ReconResult> {
    let input = load_inputs(&cfg.inputs, cfg.variant, cfg.boundary)?;
    let pitch = input.data.pitch();
    let bounds = default_bounds(&input.data, cfg.box_factor)?;
    let problem = build_problem_with_seed(
        cfg.variant,
        &input.ops,
        input.data,
        cfg.sigma_g,
        bounds,
        cfg.solver.seed,
    )?;
    let result = pdhg_run(&problem, &cfg.solver, None)?;
    let metrics = match &input.truth {
        Some(t) => Some(metrics::evaluate(&result.u, t, cfg.ssim)?),
        None => None,
    };
    let u = result.u.clone().with_pitch(pitch);
    dir.write_volume("u", &u)?;
    dir.write_mips("u", &u)?;
    if let Some(v) = &result.v {
        dir.write_volume("v", &v.clone().with_pitch(pitch))?;
    }
    dir.write_json("gap_history.json", &result.gap_history)?;
    dir.write_json(
        "result.json",
        &DeconvolveReport {
            result: &result,
            bounds,
            metrics,
        },
    )?;
    Ok(result)
}

/// One line of the comparison table. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub phantom: String,
    pub variant: MethodVariant,
    pub alpha: f64,
    pub l2_error: f64,
    pub ssim: f64,
    pub psnr_db: f64,
    pub iterations: usize,
    pub final_gap: f64,
    pub converged: bool,
    pub runtime_s: f64,
    /// Set in discrepancy mode on the weight the principle picked.
    pub selected: bool,
}

impl CompareRow {
    fn new(phantom: &str, res: &ReconResult, m: &MetricReport, selected: bool) -> Self {
        CompareRow {
            phantom: phantom.to_string(),
            variant: res.variant,
            alpha: res.alpha,
            l2_error: m.l2_normalized,
            ssim: m.ssim,
            psnr_db: m.psnr,
            iterations: res.iterations,
            final_gap: res.gap,
            converged: res.converged,
            runtime_s: res.wall_ms / 1e3,
            selected,
        }
    }
}

pub const CSV_COLUMNS: [&str; 11] = [
    "phantom",
    "variant",
    "alpha",
    "l2_error",
    "ssim",
    "psnr_db",
    "iterations",
    "final_gap",
    "converged",
    "runtime_s",
    "selected",
];

pub fn write_rows_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(to_io)?;
    }
    for r in rows {
        w.serialize(r).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    ssim_window: SsimWindow,
    scale: f64,
    rows: &'a [CompareRow],
    sweeps: &'a [SweepReport],
}

/// Simulates once, then solves every configured variant at every weight and
/// writes `results.csv` and `results.json`.
pub fn cmd_compare(cfg: &CompareConfig, dir: &RunDir) -> Result<Vec<CompareRow>> {
    let (sim, _) = simulate(&cfg.model, &cfg.phantom, &cfg.noise, cfg.boundary)?;
    dir.write_mips("truth", &sim.truth)?;
    dir.write_mips("f", &sim.data)?;
    let name = cfg.phantom.name();
    let bounds = default_bounds(&sim.data, cfg.box_factor)?;
    let mut rows = Vec::new();
    let mut sweeps = Vec::new();
    for &variant in &cfg.variants {
        let problem = build_problem_with_seed(
            variant,
            &sim.ops,
            sim.data.clone(),
            cfg.noise.sigma_g,
            bounds,
            cfg.solver.seed,
        )?;
        let mut best: Option<(f64, Volume)> = None;
        let mut keep_best = |m: &MetricReport, u: &Volume| {
            if best.as_ref().is_none_or(|(e, _)| m.l2_normalized < *e) {
                best = Some((m.l2_normalized, u.clone()));
            }
        };
        match &cfg.alphas {
            AlphaSelection::Grid { grid } => {
                for alpha in grid.values()? {
                    let params = SolverParams {
                        alpha,
                        ..cfg.solver.clone()
                    };
                    let res = pdhg_run(&problem, &params, None)?;
                    let m = metrics::evaluate(&res.u, &sim.truth, cfg.ssim)?;
                    keep_best(&m, &res.u);
                    rows.push(CompareRow::new(name, &res, &m, false));
                }
            }
            AlphaSelection::Discrepancy {
                grid,
                tau_disc,
                fidelity,
            } => {
                let nb = NoiseBounds {
                    tau_disc: *tau_disc,
                    ..NoiseBounds::for_data(&sim.data, cfg.noise.sigma_g, *fidelity)?
                };
                let first = rows.len();
                let mut err = None;
                let sel = discrepancy_search(
                    &problem,
                    &cfg.solver,
                    &nb,
                    &grid.values()?,
                    SearchOptions {
                        warm_start: true,
                        stop_early: false,
                    },
                    |_, res| match metrics::evaluate(&res.u, &sim.truth, cfg.ssim) {
                        Ok(m) => {
                            keep_best(&m, &res.u);
                            rows.push(CompareRow::new(name, res, &m, false));
                        }
                        Err(e) => err = Some(e),
                    },
                )?;
                if let Some(e) = err {
                    return Err(e);
                }
                for r in &mut rows[first..] {
                    r.selected = r.alpha == sel.alpha;
                }
                sweeps.push(sel.report);
            }
        }
        if let Some((_, u)) = best {
            let tag = variant.tag().to_lowercase();
            dir.write_volume(&format!("u_best_{tag}"), &u)?;
            dir.write_mips(&format!("u_best_{tag}"), &u)?;
        }
    }
    write_rows_csv(&dir.file("results.csv"), &rows)?;
    dir.write_json(
        "results.json",
        &CompareOutput {
            ssim_window: cfg.ssim,
            scale: sim.scale,
            rows: &rows,
            sweeps: &sweeps,
        },
    )?;
    Ok(rows)
}

#[derive(Serialize)]
struct TuneOutput<'a> {
    report: &'a SweepReport,
    /// Scores of each solved weight against the ground truth, in sweep order.
    metrics: &'a [(f64, MetricReport)],
}

/// Runs the discrepancy sweep and writes `sweep.json`, the selected
/// reconstruction `u` and `result.json`.
pub fn cmd_tune(cfg: &TuneConfig, dir: &RunDir) -> Result<SweepReport> {
    let input = load_inputs(&cfg.inputs, cfg.variant, cfg.boundary)?;
    let pitch = input.data.pitch();
    let bounds = default_bounds(&input.data, cfg.box_factor)?;
    let nb = NoiseBounds {
        tau_disc: cfg.tau_disc,
        ..NoiseBounds::for_data(&input.data, cfg.sigma_g, cfg.fidelity)?
    };
    let problem = build_problem_with_seed(
        cfg.variant,
        &input.ops,
        input.data,
        cfg.sigma_g,
        bounds,
        cfg.solver.seed,
    )?;
    let mut scores = Vec::new();
    let mut err = None;
    let started = Instant::now();
    let sel = discrepancy_search(&problem, &cfg.solver, &nb, &cfg.grid.values()?, cfg.search, |e, res| {
        if let Some(t) = &input.truth {
            match metrics::evaluate(&res.u, t, cfg.ssim) {
                Ok(m) => scores.push((e.alpha, m)),
                Err(x) => err = Some(x),
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    log::info!("sweep finished in {:.1} s", started.elapsed().as_secs_f64());
    let u = sel.result.u.clone().with_pitch(pitch);
    dir.write_volume("u", &u)?;
    dir.write_mips("u", &u)?;
    dir.write_json(
        "sweep.json",
        &TuneOutput {
            report: &sel.report,
            metrics: &scores,
        },
    )?;
    dir.write_json("result.json", &sel.result)?;
    Ok(sel.report)
}
