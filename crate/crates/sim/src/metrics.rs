//! Run metrics and the result files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use soar_core::photographer::{DynamicLimits, Trajectory};
use soar_core::world::DistanceField;

use crate::engine::{Engine, PoseRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub name: String,
    pub role: String,
    /// s in motion
    pub flight_time: f64,
    /// integral of sampled speed, m
    pub path_length: f64,
    /// summed length of completed pieces, m
    pub polyline_length: f64,
    pub visited: usize,
    pub last_visit: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub t: f64,
    pub n_vct: usize,
    pub best_fitness: f64,
    pub k_same: Vec<usize>,
}

/// Dense (100 Hz) checks over every trajectory the engine emitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KinoStats {
    pub trajectories: usize,
    pub samples: usize,
    pub speed_violations: usize,
    pub accel_violations: usize,
    pub clearance_violations: usize,
    /// Largest speed over that trajectory's limit.
    pub max_speed_ratio: f64,
    pub max_accel_ratio: f64,
    pub min_clearance: Option<f64>,
}

pub const AUDIT_HZ: f64 = 100.0;
pub const AUDIT_TOL: f64 = 1e-6;

impl KinoStats {
    pub fn audit(&mut self, traj: &Trajectory, field: &DistanceField, lim: DynamicLimits, r_s: f64) {
        self.trajectories += 1;
        let n = (traj.duration() * AUDIT_HZ).ceil() as usize;
        let times = (0..=n)
            .map(|i| (i as f64 / AUDIT_HZ).min(traj.duration()))
            .chain(traj.piece_ends());
        for t in times {
            let s = traj.sample(t);
            self.samples += 1;
            let v = s.velocity.norm();
            let a = s.acceleration.norm();
            let c = field.at(s.pose.position);
            if v > lim.v_max + AUDIT_TOL {
                self.speed_violations += 1;
            }
            if a > lim.a_max + AUDIT_TOL {
                self.accel_violations += 1;
            }
            if c < r_s {
                self.clearance_violations += 1;
            }
            self.max_speed_ratio = self.max_speed_ratio.max(v / lim.v_max);
            self.max_accel_ratio = self.max_accel_ratio.max(a / lim.a_max);
            self.min_clearance = Some(self.min_clearance.map_or(c, |m: f64| m.min(c)));
        }
    }

    pub fn clean(&self) -> bool {
        self.speed_violations == 0 && self.accel_violations == 0 && self.clearance_violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub complete: bool,
    pub ticks: u64,
    pub sim_time: f64,
    pub exploration_time: Option<f64>,
    /// Latest photographer visit.
    pub completion_time: Option<f64>,
    pub agents: Vec<AgentMetrics>,
    pub viewpoint_count: usize,
    pub visited_viewpoints: usize,
    pub abandoned_viewpoints: usize,
    pub extracted_points: usize,
    pub covered_points: usize,
    pub verified_points: usize,
    pub abandoned_points: usize,
    pub coverage_rate: f64,
    pub verified_coverage_rate: f64,
    pub cycles: Vec<CycleRecord>,
    pub kinodynamic: KinoStats,
}

impl Metrics {
    pub fn photographers(&self) -> impl Iterator<Item = &AgentMetrics> {
        self.agents.iter().filter(|a| a.role == "photographer")
    }
}

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct ExportError {
    pub path: PathBuf,
    pub source: io::Error,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_poses(path: &Path, rows: &[PoseRow]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExportError {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| ExportError {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

pub fn summary_markdown(m: &Metrics) -> String {
    let mut s = String::new();
    s.push_str(&format!("# {}\n\n", m.scenario));
    if !m.complete {
        s.push_str("**INCOMPLETE**: tick budget exhausted before completion.\n\n");
    }
    let time = m.completion_time.map_or("-".to_string(), |t| format!("{t:.1}"));
    let max_len = m.photographers().map(|a| a.path_length).fold(0.0, f64::max);
    s.push_str("| Method | Time (s) | Path Length (m) | Viewpoint Num | Coverage Rate |\n");
    s.push_str("|---|---|---|---|---|\n");
    s.push_str(&format!(
        "| incremental | {time} | {max_len:.1} | {} | {:.1}% |\n\n",
        m.viewpoint_count,
        100.0 * m.verified_coverage_rate
    ));
    s.push_str("| Agent | Time (s) | Path Length (m) | Visited |\n|---|---|---|---|\n");
    for a in &m.agents {
        s.push_str(&format!(
            "| {} | {:.1} | {:.1} | {} |\n",
            a.name, a.flight_time, a.path_length, a.visited
        ));
    }
    s.push_str(&format!(
        "\nexploration finished: {}\n",
        m.exploration_time.map_or("no".to_string(), |t| format!("{t:.1} s"))
    ));
    s
}

/// Writes `metrics.json`, `poses_<agent>.csv`, `cycles.jsonl` and
/// `summary.md` into `dir`.
pub fn export_results(engine: &Engine, m: &Metrics, dir: &Path) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("metrics.json");
    fs::write(&p, serde_json::to_string_pretty(m).expect("metrics serialize")).map_err(io_err(&p))?;
    for a in std::iter::once(engine.explorer()).chain(engine.photographers()) {
        write_poses(&dir.join(format!("poses_{}.csv", a.name)), &a.rows)?;
    }
    let mut lines = String::new();
    for c in engine.cycles() {
        let v = serde_json::json!({
            "cycle": c.record.cycle,
            "t": c.record.t,
            "n_vct": c.record.n_vct,
            "best_fitness": c.record.best_fitness,
            "k_same": c.record.k_same,
            "ga_millis": c.ga_millis,
        });
        lines.push_str(&v.to_string());
        lines.push('\n');
    }
    let p = dir.join("cycles.jsonl");
    fs::write(&p, lines).map_err(io_err(&p))?;
    let p = dir.join("summary.md");
    fs::write(&p, summary_markdown(m)).map_err(io_err(&p))
}

pub fn load_metrics(path: &Path) -> io::Result<Metrics> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(io::Error::other)
}
