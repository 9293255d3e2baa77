//! Simulated panoramic LiDAR and gimbal camera visibility.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{atan2, cos, sin, to_radians, CameraPose, Pose, Vec3};
use crate::world::{RayHit, VoxelGrid, VoxelState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("lidar max_range must be positive")]
    Range,
    #[error("lidar needs at least 4 azimuth samples")]
    Azimuth,
    #[error("lidar elevation angles must be strictly increasing within [-90, 90] degrees")]
    Elevation,
    #[error("camera field of view must lie strictly between 0 and 180 degrees")]
    FieldOfView,
    #[error("camera max_view_dist must be positive")]
    ViewDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    /// metres
    pub max_range: f64,
    pub azimuth_count: usize,
    /// degrees, strictly increasing
    pub elevation_angles: Vec<f64>,
    /// Hz
    pub rate: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        LidarParams {
            max_range: 30.0,
            azimuth_count: 180,
            elevation_angles: (0..=18).map(|i| -45.0 + 5.0 * i as f64).collect(),
            rate: 10.0,
        }
    }
}

impl LidarParams {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.max_range > 0.0) {
            return Err(SensorError::Range);
        }
        if self.azimuth_count < 4 {
            return Err(SensorError::Azimuth);
        }
        let e = &self.elevation_angles;
        if e.is_empty()
            || e.iter().any(|a| !(-90.0..=90.0).contains(a))
            || e.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(SensorError::Elevation);
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.azimuth_count * self.elevation_angles.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scan {
    pub hits: Vec<Vec3>,
    pub misses: Vec<Vec3>,
}

/// One instantaneous panoramic sweep against the ground truth. Each
/// (azimuth, elevation) ray reports the point where it enters the first
/// occupied voxel, or its endpoint at `max_range`.
pub fn lidar_scan(truth: &VoxelGrid, pose: Pose, params: &LidarParams) -> Scan {
    let mut scan = Scan::default();
    let origin = pose.position;
    let spec = truth.spec();
    let eps = spec.resolution * 1e-6;
    for k in 0..params.azimuth_count {
        let az = pose.yaw + 2.0 * core::f64::consts::PI * k as f64 / params.azimuth_count as f64;
        let (saz, caz) = (sin(az), cos(az));
        for &el_deg in &params.elevation_angles {
            let el = to_radians(el_deg);
            let (sel, cel) = (sin(el), cos(el));
            let dir = Vec3::new(cel * caz, cel * saz, sel);
            let end = origin + dir * params.max_range;
            let mut hit = None;
            for (v, t) in spec.walk(origin, end) {
                if truth.state(v) == VoxelState::Occupied {
                    let p = origin + (end - origin) * t;
                    let b = spec.voxel_box(v);
                    hit = Some(Vec3::new(
                        p.x.clamp(b.min.x + eps, b.max.x - eps),
                        p.y.clamp(b.min.y + eps, b.max.y - eps),
                        p.z.clamp(b.min.z + eps, b.max.z - eps),
                    ));
                    break;
                }
            }
            match hit {
                Some(h) => scan.hits.push(h),
                None => scan.misses.push(end),
            }
        }
    }
    scan
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// degrees
    pub fov_h: f64,
    /// degrees
    pub fov_v: f64,
    /// metres
    pub max_view_dist: f64,
}

impl CameraModel {
    /// Standard gimbal camera with range tied to the viewpoint standoff.
    pub fn with_standoff(standoff: f64) -> Self {
        CameraModel {
            fov_h: 80.0,
            fov_v: 60.0,
            max_view_dist: 2.5 * standoff,
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let ok = |a: f64| a > 0.0 && a < 180.0;
        if !ok(self.fov_h) || !ok(self.fov_v) {
            return Err(SensorError::FieldOfView);
        }
        if !(self.max_view_dist > 0.0) {
            return Err(SensorError::ViewDistance);
        }
        Ok(())
    }
}

const ANGLE_TOL: f64 = 1e-9;

/// Range and pyramidal field-of-view test (closed boundary), no occlusion.
pub fn in_frustum(cam_pose: &CameraPose, pt: Vec3, cam: &CameraModel) -> bool {
    let d = pt - cam_pose.position;
    if d.norm_sq() > cam.max_view_dist * cam.max_view_dist {
        return false;
    }
    let f = cam_pose.forward();
    let x = d.dot(f);
    if !(x > 0.0) {
        return false;
    }
    let left = Vec3::new(-sin(cam_pose.yaw), cos(cam_pose.yaw), 0.0);
    let up = f.cross(left);
    let h = atan2(d.dot(left).abs(), x);
    let v = atan2(d.dot(up).abs(), x);
    h <= to_radians(cam.fov_h) * 0.5 + ANGLE_TOL && v <= to_radians(cam.fov_v) * 0.5 + ANGLE_TOL
}

/// Frustum test plus an unobstructed ray that first meets the point's own
/// occupied voxel.
pub fn camera_visible(grid: &VoxelGrid, cam_pose: &CameraPose, pt: Vec3, cam: &CameraModel) -> bool {
    if !in_frustum(cam_pose, pt, cam) {
        return false;
    }
    let Some(pv) = grid.spec().voxel_of(pt) else {
        return false;
    };
    grid.raycast(cam_pose.position, pt) == RayHit::ReachedOccupied(pv)
}
