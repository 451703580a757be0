//! JSON run configurations, one per command.
//!
//! Every struct rejects unknown keys. Relative paths are resolved against the
//! directory holding the config file. `validate` checks everything that can
//! be checked without touching the inputs, so a bad config fails before any
//! computation starts.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Boundary;
use crate::metrics::SsimWindow;
use crate::optics::{self, FitOptions, OpticalConfig, ZernikeCoeffs};
use crate::phantom::{NoiseSpec, PhantomSpec};
use crate::solver::{MethodVariant, SolverParams};
use crate::tuning::{alpha_grid, DiscrepancyMode, SearchOptions};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffPreset {
    /// Unaberrated pupil.
    Zero,
    /// Coefficients fitted to the reference objective.
    Fitted,
}

/// Aberration coefficients: a preset name or a list of 15 values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoeffsSpec {
    Preset(CoeffPreset),
    Values(ZernikeCoeffs),
}

impl Default for CoeffsSpec {
    fn default() -> Self {
        CoeffsSpec::Preset(CoeffPreset::Zero)
    }
}

impl CoeffsSpec {
    pub fn resolve(&self) -> ZernikeCoeffs {
        match self {
            CoeffsSpec::Preset(CoeffPreset::Zero) => ZernikeCoeffs::zero(),
            CoeffsSpec::Preset(CoeffPreset::Fitted) => ZernikeCoeffs::fitted_objective(),
            CoeffsSpec::Values(c) => *c,
        }
    }
}

/// Optical model shared by the commands that synthesise PSFs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfModel {
    pub optics: OpticalConfig,
    pub coeffs: CoeffsSpec,
    /// Width of the extra Gaussian blur of the detection PSF, in voxels.
    pub blur_sigma: f64,
}

impl PsfModel {
    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(Error::param(format!("blur_sigma must be >= 0, got {}", self.blur_sigma)));
        }
        Ok(())
    }

    pub fn detection(&self) -> Result<Volume> {
        optics::detection_psf(&self.optics, &self.coeffs.resolve(), self.blur_sigma)
    }

    pub fn illumination(&self) -> Result<Volume> {
        optics::lightsheet_profile(&self.optics)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Bead volume on the optics grid.
    pub bead: PathBuf,
    pub bead_radius_um: f64,
    #[serde(default)]
    pub init_coeffs: CoeffsSpec,
    #[serde(default = "default_init_sigma")]
    pub init_sigma: f64,
    #[serde(default)]
    pub options: FitOptions,
}

fn default_init_sigma() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfConfig {
    pub model: PsfModel,
    pub fit: Option<FitConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub model: PsfModel,
    pub phantom: PhantomSpec,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub boundary: Boundary,
}

/// Measured volume and the PSFs it was taken with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFiles {
    pub data: PathBuf,
    /// Detection PSF.
    pub kernel: PathBuf,
    /// Light-sheet profile; needed by the light-sheet variants only.
    #[serde(default)]
    pub illumination: Option<PathBuf>,
    /// Ground truth on the data's intensity scale, for scoring.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

fn default_box_factor() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeconvolveConfig {
    pub inputs: InputFiles,
    pub variant: MethodVariant,
    pub sigma_g: f64,
    #[serde(default)]
    pub solver: SolverParams,
    /// Upper bound of the intensity box as a multiple of `max f`.
    #[serde(default = "default_box_factor")]
    pub box_factor: f64,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub ssim: SsimWindow,
}

/// Regularisation weights: an explicit list or a log-spaced range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaGrid {
    Values(Vec<f64>),
    LogSpaced(LogGrid),
}

/// `per_decade` points per decade over `decades` decades from `lo`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub lo: f64,
    #[serde(default = "default_decades")]
    pub decades: usize,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

fn default_decades() -> usize {
    3
}

fn default_per_decade() -> usize {
    8
}

impl AlphaGrid {
    /// Sorted ascending values.
    pub fn values(&self) -> Result<Vec<f64>> {
        let mut v = match self {
            AlphaGrid::Values(v) => v.clone(),
            AlphaGrid::LogSpaced(g) => alpha_grid(g.lo, g.decades, g.per_decade)?,
        };
        if v.is_empty() || v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::param("alpha values must be positive and finite"));
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaSelection {
    /// Solve at every grid value.
    Grid { grid: AlphaGrid },
    /// Discrepancy sweep; every solved weight becomes a row and the selected
    /// one is flagged.
    Discrepancy {
        grid: AlphaGrid,
        #[serde(default = "default_tau")]
        tau_disc: f64,
        #[serde(default)]
        fidelity: DiscrepancyMode,
    },
}

fn default_tau() -> f64 {
    1.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default)]
    pub model: PsfModel,
    pub phantom: PhantomSpec,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub boundary: Boundary,
    pub variants: Vec<MethodVariant>,
    pub alphas: AlphaSelection,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default = "default_box_factor")]
    pub box_factor: f64,
    #[serde(default)]
    pub ssim: SsimWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub inputs: InputFiles,
    pub variant: MethodVariant,
    pub sigma_g: f64,
    pub grid: AlphaGrid,
    #[serde(default = "default_tau")]
    pub tau_disc: f64,
    #[serde(default)]
    pub fidelity: DiscrepancyMode,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default = "default_box_factor")]
    pub box_factor: f64,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub ssim: SsimWindow,
}

/// Any command's configuration, as copied into the run directory.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Psf(PsfConfig),
    Simulate(SimulateConfig),
    Deconvolve(DeconvolveConfig),
    Compare(CompareConfig),
    Tune(TuneConfig),
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive, got {v}")))
    }
}

fn check_box_factor(f: f64) -> Result<()> {
    if f.is_finite() && f >= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("box_factor must be at least 1, got {f}")))
    }
}

fn check_tau(t: f64) -> Result<()> {
    if t.is_finite() && t > 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("tau_disc must exceed 1, got {t}")))
    }
}

fn check_inputs(inputs: &InputFiles, variants: &[MethodVariant]) -> Result<()> {
    if variants.iter().any(|v| v.uses_lightsheet()) && inputs.illumination.is_none() {
        return Err(Error::param("light-sheet variants need inputs.illumination"));
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl InputFiles {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data);
        resolve(base, &mut self.kernel);
        if let Some(p) = self.illumination.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = self.truth.as_mut() {
            resolve(base, p);
        }
    }
}

/// Shared behaviour of the per-command configs.
pub trait CommandConfig: DeserializeOwned + Serialize + Clone {
    fn validate(&self) -> Result<()>;
    fn resolve_paths(&mut self, _base: &Path) {}
    fn into_run_config(self) -> RunConfig;
}

impl CommandConfig for PsfConfig {
    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let Some(fit) = &self.fit {
            check_positive("fit.bead_radius_um", fit.bead_radius_um)?;
            check_positive("fit.init_sigma", fit.init_sigma)?;
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(fit) = self.fit.as_mut() {
            resolve(base, &mut fit.bead);
        }
    }

    fn into_run_config(self) -> RunConfig {
        RunConfig::Psf(self)
    }
}

impl CommandConfig for SimulateConfig {
    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.noise.validate()?;
        // the phantom's own geometry checks are cheap
        self.phantom.build(self.model.optics.dims()?).map(|_| ())
    }

    fn into_run_config(self) -> RunConfig {
        RunConfig::Simulate(self)
    }
}

impl CommandConfig for DeconvolveConfig {
    fn validate(&self) -> Result<()> {
        check_positive("sigma_g", self.sigma_g)?;
        self.solver.validate()?;
        check_box_factor(self.box_factor)?;
        self.ssim.validate()?;
        check_inputs(&self.inputs, &[self.variant])
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.inputs.resolve_paths(base);
    }

    fn into_run_config(self) -> RunConfig {
        RunConfig::Deconvolve(self)
    }
}

impl CommandConfig for CompareConfig {
    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.noise.validate()?;
        self.phantom.build(self.model.optics.dims()?)?;
        if self.variants.is_empty() {
            return Err(Error::param("variants must not be empty"));
        }
        self.solver.validate()?;
        check_box_factor(self.box_factor)?;
        self.ssim.validate()?;
        if self.noise.sigma_g <= 0.0 {
            return Err(Error::param("compare needs noise.sigma_g > 0 for the solver's Gaussian term"));
        }
        match &self.alphas {
            AlphaSelection::Grid { grid } => {
                grid.values()?;
            }
            AlphaSelection::Discrepancy { grid, tau_disc, .. } => {
                if grid.values()?.len() < 2 {
                    return Err(Error::param("discrepancy mode needs at least two weights"));
                }
                check_tau(*tau_disc)?;
            }
        }
        Ok(())
    }

    fn into_run_config(self) -> RunConfig {
        RunConfig::Compare(self)
    }
}

impl CommandConfig for TuneConfig {
    fn validate(&self) -> Result<()> {
        check_positive("sigma_g", self.sigma_g)?;
        self.solver.validate()?;
        check_box_factor(self.box_factor)?;
        check_tau(self.tau_disc)?;
        self.ssim.validate()?;
        if self.grid.values()?.len() < 2 {
            return Err(Error::param("the weight grid needs at least two values"));
        }
        check_inputs(&self.inputs, &[self.variant])
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.inputs.resolve_paths(base);
    }

    fn into_run_config(self) -> RunConfig {
        RunConfig::Tune(self)
    }
}

/// Parses, resolves and validates a config. Every failure, including an
/// unreadable file, is reported as a configuration error.
pub fn parse_config<T: CommandConfig>(text: &str, base: &Path) -> Result<T> {
    let mut cfg: T = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.resolve_paths(base);
    cfg.validate().map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    Ok(cfg)
}

pub fn load_config<T: CommandConfig>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"phantom": {"kind": "steps", "levels": 4}, "noise": {"sigma_g": 10, "peak": 2000}, "extra": 1}"#;
        assert!(matches!(parse_config::<SimulateConfig>(bad, Path::new(".")), Err(Error::Config(_))));
        let nested = r#"{"model": {"optics": {"nn": 1.3}}}"#;
        assert!(parse_config::<PsfConfig>(nested, Path::new(".")).is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let cfg: PsfConfig = parse_config("{}", Path::new(".")).unwrap();
        assert_eq!(cfg.model.optics, OpticalConfig::default());
        assert_eq!(cfg.model.coeffs.resolve(), ZernikeCoeffs::zero());
        assert!(cfg.fit.is_none());
    }

    #[test]
    fn coeff_forms() {
        let fitted: CoeffsSpec = serde_json::from_str("\"fitted\"").unwrap();
        assert_eq!(fitted.resolve().as_array()[0], -0.7763);
        let list = format!("[{}]", vec!["0.5"; 15].join(","));
        let vals: CoeffsSpec = serde_json::from_str(&list).unwrap();
        assert_eq!(vals.resolve().as_array()[14], 0.5);
        assert!(serde_json::from_str::<CoeffsSpec>("[1, 2]").is_err());
        assert!(serde_json::from_str::<CoeffsSpec>("\"bogus\"").is_err());
    }

    #[test]
    fn semantic_checks() {
        let ls_without_sheet = r#"{
            "inputs": {"data": "f.json", "kernel": "h.json"},
            "variant": "LS-IC", "sigma_g": 10
        }"#;
        assert!(parse_config::<DeconvolveConfig>(ls_without_sheet, Path::new(".")).is_err());
        let psf_only = r#"{
            "inputs": {"data": "f.json", "kernel": "h.json"},
            "variant": "PSF-L2", "sigma_g": 10
        }"#;
        let cfg: DeconvolveConfig = parse_config(psf_only, Path::new("/base")).unwrap();
        assert_eq!(cfg.inputs.data, PathBuf::from("/base/f.json"));
        let bad_solver = r#"{
            "inputs": {"data": "f.json", "kernel": "h.json"},
            "variant": "PSF-L2", "sigma_g": 10, "solver": {"rho": 3}
        }"#;
        assert!(parse_config::<DeconvolveConfig>(bad_solver, Path::new(".")).is_err());
    }

    #[test]
    fn alpha_grids() {
        let g: AlphaGrid = serde_json::from_str("[3, 1, 2, 2]").unwrap();
        assert_eq!(g.values().unwrap(), vec![1.0, 2.0, 3.0]);
        let l: AlphaGrid = serde_json::from_str(r#"{"lo": 0.01}"#).unwrap();
        assert_eq!(l.values().unwrap().len(), 25);
        assert!(serde_json::from_str::<AlphaGrid>(r#"{"lo": 0.01, "step": 2}"#).is_err());
        let sel: AlphaSelection =
            serde_json::from_str(r#"{"mode": "discrepancy", "grid": {"lo": 0.1, "decades": 1, "per_decade": 2}}"#).unwrap();
        assert!(matches!(sel, AlphaSelection::Discrepancy { tau_disc, .. } if tau_disc == 1.01));
    }
}
