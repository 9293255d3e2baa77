//! Ground-truth scenes: builtin box layouts and point-cloud files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use soar_core::geom::{Aabb, Vec3};
use soar_core::world::{voxelize_scene, GridSpec, VoxelGrid, VoxelState, WorldError};

use crate::scenario::{Scenario, SceneSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinScene {
    Empty,
    Box,
    Corridor,
    Building,
}

/// Solid boxes in a bounded volume plus a default explorer start.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub bounds: Aabb,
    pub resolution: f64,
    pub solids: Vec<Aabb>,
    pub start: Vec3,
}

fn aabb(min: [f64; 3], max: [f64; 3]) -> Aabb {
    Aabb::new(Vec3::from_array(min), Vec3::from_array(max))
}

pub fn layout(s: BuiltinScene) -> Layout {
    match s {
        BuiltinScene::Empty => Layout {
            bounds: aabb([0.0; 3], [10.0, 10.0, 6.0]),
            resolution: 0.5,
            solids: Vec::new(),
            start: Vec3::new(5.25, 5.25, 3.25),
        },
        BuiltinScene::Box => Layout {
            bounds: aabb([0.0; 3], [20.0, 20.0, 10.0]),
            resolution: 0.5,
            solids: vec![aabb([8.0, 8.0, 0.0], [12.0, 12.0, 4.0])],
            start: Vec3::new(3.25, 3.25, 3.25),
        },
        // 64 voxels a side
        BuiltinScene::Corridor => Layout {
            bounds: aabb([0.0; 3], [32.0, 32.0, 32.0]),
            resolution: 0.5,
            solids: vec![
                aabb([2.0, 11.0, 0.0], [30.0, 12.0, 12.0]),
                aabb([2.0, 20.0, 0.0], [30.0, 21.0, 12.0]),
                aabb([14.0, 16.0, 0.0], [16.0, 17.0, 5.0]),
            ],
            start: Vec3::new(4.25, 16.25, 4.25),
        },
        // main block with a tower on top
        BuiltinScene::Building => Layout {
            bounds: aabb([0.0; 3], [30.0, 30.0, 15.0]),
            resolution: 0.5,
            solids: vec![
                aabb([9.0, 9.0, 0.0], [21.0, 21.0, 6.0]),
                aabb([12.0, 12.0, 6.0], [17.0, 17.0, 11.0]),
            ],
            start: Vec3::new(3.25, 3.25, 4.25),
        },
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene {0}: {1}")]
    Io(String, std::io::Error),
    #[error("bad scene row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("bad scene json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario has no scene, bounds or resolution")]
    Unresolved,
    #[error(transparent)]
    World(#[from] WorldError),
}

pub fn read_csv_points(path: &Path) -> Result<Vec<Vec3>, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::Io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SceneError::Row {
            row: i + 1,
            msg: e.to_string(),
        })?;
        let vals: Result<Vec<f64>, _> = rec.iter().take(3).map(str::parse::<f64>).collect();
        match vals {
            Ok(v) if v.len() == 3 => out.push(Vec3::new(v[0], v[1], v[2])),
            // header line
            Err(_) if i == 0 => continue,
            _ => {
                return Err(SceneError::Row {
                    row: i + 1,
                    msg: "expected x,y,z".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_json_points(path: &Path) -> Result<Vec<Vec3>, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::Io(path.display().to_string(), e))?;
    let raw: Vec<[f64; 3]> = serde_json::from_str(&text)?;
    Ok(raw.into_iter().map(Vec3::from_array).collect())
}

/// Voxels whose centre lies inside any solid are occupied.
pub fn grid_from_solids(spec: GridSpec, solids: &[Aabb]) -> VoxelGrid {
    let mut g = VoxelGrid::new(spec, VoxelState::Free);
    let ids: Vec<_> = g.ids().collect();
    for v in ids {
        let c = g.spec().center(v);
        if solids.iter().any(|b| b.contains(c)) {
            g.set_state(v, VoxelState::Occupied);
        }
    }
    g
}

/// Ground-truth occupancy for a resolved scenario.
pub fn build_truth(s: &Scenario) -> Result<VoxelGrid, SceneError> {
    let (Some(src), Some(bounds), Some(res)) = (&s.scene, s.bounds, s.resolution) else {
        return Err(SceneError::Unresolved);
    };
    match src {
        SceneSource::Builtin(b) => {
            let l = layout(*b);
            Ok(grid_from_solids(GridSpec::new(bounds, res)?, &l.solids))
        }
        SceneSource::Csv(p) => Ok(voxelize_scene(&read_csv_points(&s.scene_path(p))?, res, bounds)?),
        SceneSource::Json(p) => Ok(voxelize_scene(&read_json_points(&s.scene_path(p))?, res, bounds)?),
    }
}
