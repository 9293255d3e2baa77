//! Scenario files: scene source, grid, agents and every planner parameter.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use soar_core::assign::AssignParams;
use soar_core::coverage::CoverageParams;
use soar_core::explore::ExploreParams;
use soar_core::geom::{Aabb, Vec3};
use soar_core::photographer::{DynamicLimits, PhotographerParams};
use soar_core::sensors::{CameraModel, LidarParams};

use crate::scene::{self, BuiltinScene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Builtin(BuiltinScene),
    /// `x,y,z` rows, optional header.
    Csv(PathBuf),
    /// Array of `[x, y, z]`.
    Json(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub scene: Option<SceneSource>,
    pub resolution: Option<f64>,
    pub bounds: Option<Aabb>,
    pub n_photographers: usize,
    pub explorer_start: Option<Vec3>,
    pub photographer_starts: Vec<Vec3>,
    /// s
    pub dt: f64,
    /// s between explorer planning cycles
    pub planning_period: f64,
    pub seed: u64,
    pub max_ticks: u64,
    /// Radius around each start marked free before the first scan, m.
    pub free_radius: f64,
    /// Distance-field saturation, m.
    pub field_max: f64,
    /// Horizontal and vertical camera field of view, degrees.
    pub camera_fov: [f64; 2],
    /// Camera range as a multiple of the standoff distance.
    pub view_range_factor: f64,
    pub coverage: CoverageParams,
    pub explore: ExploreParams,
    pub assign: AssignParams,
    pub photographer: PhotographerParams,
    pub lidar: LidarParams,
    pub explorer_limits: DynamicLimits,
    pub photographer_limits: DynamicLimits,
    /// Directory relative scene paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: String::from("scenario"),
            scene: None,
            resolution: None,
            bounds: None,
            n_photographers: 0,
            explorer_start: None,
            photographer_starts: Vec::new(),
            dt: 0.1,
            planning_period: 1.0,
            seed: 0,
            max_ticks: 30_000,
            free_radius: 2.0,
            field_max: 5.0,
            camera_fov: [80.0, 60.0],
            view_range_factor: 2.5,
            coverage: CoverageParams::default(),
            explore: ExploreParams::default(),
            assign: AssignParams::default(),
            photographer: PhotographerParams::default(),
            lidar: LidarParams::default(),
            explorer_limits: DynamicLimits::explorer(),
            photographer_limits: DynamicLimits::photographer(),
            base_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl Scenario {
    pub fn builtin(scene: BuiltinScene, n_photographers: usize) -> Self {
        let mut s = Scenario {
            name: format!("{scene:?}").to_lowercase(),
            scene: Some(SceneSource::Builtin(scene)),
            n_photographers,
            ..Scenario::default()
        };
        s.resolve();
        s
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            fov_h: self.camera_fov[0],
            fov_v: self.camera_fov[1],
            max_view_dist: self.view_range_factor * self.coverage.standoff,
        }
    }

    pub fn ticks_per_cycle(&self) -> u64 {
        ((self.planning_period / self.dt).round() as u64).max(1)
    }

    pub fn scene_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Fills grid and start fields left open, from the builtin layout when
    /// there is one.
    pub fn resolve(&mut self) {
        let layout = match &self.scene {
            Some(SceneSource::Builtin(b)) => Some(scene::layout(*b)),
            _ => None,
        };
        if self.resolution.is_none() {
            self.resolution = Some(layout.as_ref().map_or(0.5, |l| l.resolution));
        }
        if self.bounds.is_none() {
            self.bounds = layout.as_ref().map(|l| l.bounds);
        }
        if self.explorer_start.is_none() {
            self.explorer_start = layout.as_ref().map(|l| l.start).or_else(|| {
                self.bounds
                    .map(|b| Vec3::new(b.min.x + 2.25, b.min.y + 2.25, 0.5 * (b.min.z + b.max.z)))
            });
        }
        if self.photographer_starts.is_empty() {
            if let Some(e) = self.explorer_start {
                self.photographer_starts = (0..self.n_photographers)
                    .map(|k| e + Vec3::new(1.5 * (k as f64 + 1.0), 0.0, 0.0))
                    .collect();
            }
        }
    }

    /// Every violation found, not only the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        match &self.scene {
            None => errs.push("scene: missing".to_string()),
            Some(SceneSource::Csv(p)) | Some(SceneSource::Json(p)) => {
                let full = self.scene_path(p);
                if !full.is_file() {
                    errs.push(format!("scene: file {} not found", full.display()));
                }
                if self.bounds.is_none() {
                    errs.push("bounds: required for file scenes".into());
                }
            }
            Some(SceneSource::Builtin(_)) => {}
        }
        match self.resolution {
            Some(r) if r > 0.0 && r.is_finite() => {}
            _ => errs.push("resolution: must be positive".into()),
        }
        if let Some(b) = self.bounds {
            if b.is_degenerate() {
                errs.push("bounds: empty box".into());
            }
            for (i, p) in self.explorer_start.iter().chain(&self.photographer_starts).enumerate() {
                if !b.contains(*p) {
                    errs.push(format!("start {i}: outside bounds"));
                }
            }
        }
        if self.n_photographers < 1 {
            errs.push("n_photographers: must be at least 1".into());
        }
        if !self.photographer_starts.is_empty() && self.photographer_starts.len() != self.n_photographers {
            errs.push(format!(
                "photographer_starts: {} given for {} photographers",
                self.photographer_starts.len(),
                self.n_photographers
            ));
        }
        if !(self.dt > 0.0) {
            errs.push("dt: must be positive".into());
        }
        if !(self.planning_period >= self.dt) {
            errs.push("planning_period: must be at least dt".into());
        }
        if self.max_ticks == 0 {
            errs.push("max_ticks: must be positive".into());
        }
        if !(self.field_max > 0.0) {
            errs.push("field_max: must be positive".into());
        }
        if let Err(e) = self.lidar.validate() {
            errs.push(format!("lidar: {e}"));
        }
        if let Err(e) = self.camera().validate() {
            errs.push(format!("camera: {e}"));
        }
        let c = &self.coverage;
        if !(c.standoff > 0.0) {
            errs.push("coverage.standoff: must be positive".into());
        }
        if !(c.threshold > 0.0 && c.threshold <= 1.0) {
            errs.push("coverage.threshold: must lie in (0, 1]".into());
        }
        let a = &self.assign;
        if !(a.d_thr > 0.0) {
            errs.push("assign.d_thr: must be positive".into());
        }
        if a.population < 2 {
            errs.push("assign.population: must be at least 2".into());
        }
        if a.elitism >= a.population {
            errs.push("assign.elitism: must be below population".into());
        }
        if a.tournament < 1 {
            errs.push("assign.tournament: must be at least 1".into());
        }
        if self.photographer.k_local < 1 || self.photographer.m_kc < 1 {
            errs.push("photographer: k_local and m_kc must be at least 1".into());
        }
        for (name, l) in [("explorer_limits", &self.explorer_limits), ("photographer_limits", &self.photographer_limits)] {
            if !(l.v_max > 0.0 && l.a_max > 0.0 && l.omega_max > 0.0) {
                errs.push(format!("{name}: limits must be positive"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, ScenarioError> {
    let mut s: Scenario = serde_json::from_str(text).map_err(|source| ScenarioError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    s.base_dir = path.parent().map(Path::to_path_buf);
    s.resolve();
    Ok(s)
}

/// Reads, resolves defaults and validates.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let s = parse_scenario(&text, path)?;
    s.validate()?;
    Ok(s)
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    let text = serde_json::to_string_pretty(s).expect("scenario serializes");
    fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}
