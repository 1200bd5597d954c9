//! Run configuration shared by the command-line tool and the C interface.
//!
//! A run file names (or inlines) a scenario, a grid and a body, plus the
//! parameters of each command. Relative paths resolve against the
//! directory of the run file. [`RunConfig::snapshot`] inlines everything so
//! that a manifest alone reproduces a run.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::deployment::{Deployment, ElementLayout, Grid, GridPointFile, Selection};
use crate::error::{Error, Result};
use crate::geometry::{BodyFile, Pose, Vec3, VehicleBody};
use crate::likelihood::Axis;
use crate::metric::PoseSamplingSpec;
use crate::optimizer::Strategy;
use crate::scenario::{Mode, ScenarioConfig, ScenarioFile};

/// A file path or the file's contents inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_owned(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
}

impl<T: DeserializeOwned + Clone> Source<T> {
    fn load(&self, base: &Path) -> Result<T> {
        match self {
            Source::Path(p) => read_json(&base.join(p)),
            Source::Inline(v) => Ok(v.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    /// Number of sub-arrays `K`.
    pub k: usize,
    pub strategy: Strategy,
    /// Greedy start; defaults to the mirrored roof point nearest the roof
    /// centre.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<usize>>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig { k: 12, strategy: Strategy::Exhaustive, initial: None }
    }
}

/// Sample spacing: meters, or `lambda`, `lambda/10`, `lambda/100`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spacing {
    Meters(f64),
    Preset(String),
}

impl Spacing {
    pub fn meters(&self, lambda: f64) -> Result<f64> {
        let v = match self {
            Spacing::Meters(v) => *v,
            Spacing::Preset(p) => match p.as_str() {
                "lambda" => lambda,
                "lambda/10" => lambda / 10.0,
                "lambda/100" => lambda / 100.0,
                _ => return Err(Error::Config(format!("unknown spacing `{p}` (lambda, lambda/10, lambda/100 or meters)"))),
            },
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("spacing must be positive, got {v}")));
        }
        Ok(v)
    }
}

impl std::str::FromStr for Spacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<f64>() {
            Ok(v) => Ok(Spacing::Meters(v)),
            Err(_) => Ok(Spacing::Preset(s.to_owned())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    /// True vehicle range and heading.
    pub r_m: f64,
    pub phi_deg: f64,
    /// Write the 2-D surface.
    pub surface: bool,
    /// Half extents of the surface in x and y.
    pub half_width_m: [f64; 2],
    pub spacing: Spacing,
    /// Axis cuts through the truth.
    pub cuts: Vec<Axis>,
    pub cut_half_width_m: f64,
    pub cut_spacing: Spacing,
    /// Add noise drawn from the master seed.
    pub noise: bool,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            r_m: 25.0,
            phi_deg: 30.0,
            surface: true,
            half_width_m: [1.0, 1.0],
            spacing: Spacing::Preset("lambda".into()),
            cuts: Vec::new(),
            cut_half_width_m: 0.05,
            cut_spacing: Spacing::Preset("lambda/100".into()),
            noise: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to the built-in scenario.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Source<ScenarioFile>>,
    /// Defaults to the built-in 20-point grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Source<Vec<GridPointFile>>>,
    /// Defaults to the built-in box body.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body: Option<Source<BodyFile>>,
    /// Elements per sub-array `M` (a square half-wavelength grid).
    pub elements_per_sub_array: usize,
    /// Required `K·M` for trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub element_budget: Option<usize>,
    /// Grid-point ids of the evaluated deployment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Vec<usize>>,
    pub mode: Mode,
    pub sampling: PoseSamplingSpec,
    pub trial: TrialConfig,
    pub likelihood: LikelihoodConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: None,
            grid: None,
            body: None,
            elements_per_sub_array: 4,
            element_budget: None,
            selection: None,
            mode: Mode::Coherent,
            sampling: PoseSamplingSpec::default(),
            trial: TrialConfig::default(),
            likelihood: LikelihoodConfig::default(),
            seed: 0,
        }
    }
}

/// Loaded and validated inputs of a run.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: ScenarioConfig,
    pub grid: Grid,
    pub body: VehicleBody,
    pub layout: ElementLayout,
}

impl Resolved {
    /// Deployment of the configured selection.
    pub fn deployment(&self, cfg: &RunConfig) -> Result<Deployment> {
        let ids = cfg.selection.as_ref().ok_or_else(|| Error::Config("`selection` is required".into()))?;
        self.deployment_of(ids)
    }

    pub fn deployment_of(&self, ids: &[usize]) -> Result<Deployment> {
        if ids.is_empty() {
            return Err(Error::Config("selection is empty".into()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= self.grid.len()) {
            return Err(Error::Config(format!("selection refers to grid point {bad}, grid has {}", self.grid.len())));
        }
        self.grid.deployment(Selection::from_ids(ids), &self.layout)
    }

    /// True vehicle pose of the likelihood scan, at the sampling height.
    pub fn likelihood_pose(&self, cfg: &RunConfig) -> Pose {
        let l = &cfg.likelihood;
        let z = -self.scenario.bs_height_m + cfg.sampling.reference_height_m;
        Pose::vehicle(Vec3::new(0.0, l.r_m, z), l.phi_deg.to_radians())
    }
}

impl RunConfig {
    /// Read a run file; the returned base directory resolves relative paths.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let cfg: RunConfig = read_json(path)?;
        let base = path.parent().map(Path::to_owned).unwrap_or_default();
        Ok((cfg, base))
    }

    fn scenario_file(&self, base: &Path) -> Result<ScenarioFile> {
        self.scenario.as_ref().map_or_else(|| Ok(ScenarioFile::default()), |s| s.load(base))
    }

    pub fn resolve(&self, base: &Path) -> Result<Resolved> {
        let scenario = self.scenario_file(base)?.resolve()?;
        let grid = match &self.grid {
            None => Grid::default_grid(),
            Some(g) => Grid::from_file(&g.load(base)?)?,
        };
        let body = match &self.body {
            None => VehicleBody::default_body(),
            Some(b) => VehicleBody::from_file(&b.load(base)?)?,
        };
        self.sampling.validate()?;
        let layout = ElementLayout::half_wavelength(self.elements_per_sub_array, scenario.wavelength())?;
        if let Some(b) = self.element_budget {
            crate::optimizer::check_element_budget(self.trial.k, self.elements_per_sub_array, b)?;
        }
        let l = &self.likelihood;
        if !(l.r_m > 0.0) || !l.phi_deg.is_finite() {
            return Err(Error::Config(format!("likelihood pose r = {}, φ = {} is invalid", l.r_m, l.phi_deg)));
        }
        if l.half_width_m.iter().chain([&l.cut_half_width_m]).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("scan half widths must be finite and non-negative".into()));
        }
        l.spacing.meters(scenario.wavelength())?;
        l.cut_spacing.meters(scenario.wavelength())?;
        Ok(Resolved { scenario, grid, body, layout })
    }

    /// Copy with every file source inlined.
    pub fn snapshot(&self, base: &Path) -> Result<RunConfig> {
        let mut out = self.clone();
        out.scenario = Some(Source::Inline(self.scenario_file(base)?));
        if let Some(g) = &self.grid {
            out.grid = Some(Source::Inline(g.load(base)?));
        }
        if let Some(b) = &self.body {
            out.body = Some(Source::Inline(b.load(base)?));
        }
        Ok(out)
    }
}

/// Record of one command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Command-specific arguments not held in the config.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arguments: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub evaluations: usize,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let r = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(r.grid.len(), 20);
        assert_eq!(r.layout.len(), 4);
        assert!(r.deployment(&cfg).is_err());
    }

    #[test]
    fn spacing_presets() {
        let l = 0.01;
        assert_eq!(Spacing::Preset("lambda/10".into()).meters(l).unwrap(), 0.001);
        assert_eq!("0.002".parse::<Spacing>().unwrap().meters(l).unwrap(), 0.002);
        assert!(Spacing::Preset("lambda/3".into()).meters(l).is_err());
        assert!(Spacing::Meters(-1.0).meters(l).is_err());
        let c: LikelihoodConfig = serde_json::from_str(r#"{"spacing": "lambda/100", "cuts": ["y"]}"#).unwrap();
        assert_eq!(c.spacing, Spacing::Preset("lambda/100".into()));
        assert_eq!(c.cuts, [Axis::Y]);
    }

    #[test]
    fn snapshot_inlines_files_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.json"), r#"{"bs_height_m": 15.0}"#).unwrap();
        std::fs::write(dir.path().join("g.json"), serde_json::to_string(&Grid::default_grid().to_file()).unwrap()).unwrap();
        let run = r#"{"scenario": "s.json", "grid": "g.json", "selection": [0, 14], "element_budget": 48}"#;
        std::fs::write(dir.path().join("run.json"), run).unwrap();
        let (cfg, base) = RunConfig::load(&dir.path().join("run.json")).unwrap();
        let r = cfg.resolve(&base).unwrap();
        assert_eq!(r.scenario.bs_height_m, 15.0);
        assert_eq!(r.grid, Grid::default_grid());
        assert_eq!(r.deployment(&cfg).unwrap().len(), 3);
        let snap = cfg.snapshot(&base).unwrap();
        assert!(matches!(snap.scenario, Some(Source::Inline(_))));
        let text = serde_json::to_string(&snap).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, snap);
        let r2 = back.resolve(Path::new("/nonexistent")).unwrap();
        assert_eq!(r2.scenario, r.scenario);
        assert_eq!(r2.grid, r.grid);
    }

    #[test]
    fn errors_name_paths_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        let cfg: RunConfig = serde_json::from_str(r#"{"grid": "missing.json"}"#).unwrap();
        match cfg.resolve(dir.path()) {
            Err(Error::Read { path, .. }) => assert!(path.ends_with("missing.json")),
            other => panic!("{other:?}"),
        }
        let p = dir.path().join("run.json");
        std::fs::write(&p, "{\n  \"mode\": \"coherent\",\n  \"elements\": 4\n}").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Parse { line: 3, .. })));
        let bad: RunConfig = serde_json::from_str(r#"{"element_budget": 40}"#).unwrap();
        assert!(matches!(bad.resolve(dir.path()), Err(Error::Config(_))));
    }
}
