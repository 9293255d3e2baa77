//! Incremental coverage viewpoints: explored-surface extraction, normal
//! estimation, viewpoint sampling, coverage evaluation and the
//! gravitation-like merge.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::explore::{components26, split_connected};
use crate::geom::{atan2, cos, floor, sin, sqrt, CameraPose, Vec3, PI};
use crate::linalg::{mean_and_covariance, symmetric_eigen};
use crate::sensors::{camera_visible, CameraModel};
use crate::world::{DistanceField, GridSpec, RayHit, VoxelGrid, VoxelId, NEIGHBORS6};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageParams {
    /// Viewpoint standoff D, metres.
    pub standoff: f64,
    /// Merge radius r_q, metres.
    pub merge_radius: f64,
    pub threshold: f64,
    pub max_rounds: usize,
    /// In voxels.
    pub near_frontier: f64,
    pub normal_k: usize,
    /// metres
    pub safety_radius: f64,
    /// Surface cluster size bound, metres along the first principal axis.
    pub cluster_extent: f64,
    /// Cycles an uncovered point is retried before it is given up.
    pub residual_cycles: u32,
}

impl Default for CoverageParams {
    fn default() -> Self {
        CoverageParams {
            standoff: 5.0,
            merge_radius: 2.5,
            threshold: 0.95,
            max_rounds: 5,
            near_frontier: 2.0,
            normal_k: 10,
            safety_radius: 0.8,
            cluster_extent: 4.0,
            residual_cycles: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PointId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewpointId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub id: PointId,
    pub position: Vec3,
    pub normal: Vec3,
    pub voxel: VoxelId,
    pub covered: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint5D {
    pub id: ViewpointId,
    pub pose: CameraPose,
    pub n_obs: usize,
    pub n_cover: usize,
    pub dormant: bool,
}

impl Viewpoint5D {
    pub fn new(id: ViewpointId, pose: CameraPose) -> Self {
        Viewpoint5D {
            id,
            pose,
            n_obs: 0,
            n_cover: 0,
            dormant: false,
        }
    }
}

/// Point → covering viewpoint, and its inverse.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoverageIndex {
    by_point: BTreeMap<PointId, ViewpointId>,
    by_viewpoint: BTreeMap<ViewpointId, BTreeSet<PointId>>,
}

impl CoverageIndex {
    pub fn insert(&mut self, p: PointId, v: ViewpointId) {
        if let Some(old) = self.by_point.insert(p, v) {
            if let Some(s) = self.by_viewpoint.get_mut(&old) {
                s.remove(&p);
                if s.is_empty() {
                    self.by_viewpoint.remove(&old);
                }
            }
        }
        self.by_viewpoint.entry(v).or_default().insert(p);
    }

    pub fn cover_of(&self, p: PointId) -> Option<ViewpointId> {
        self.by_point.get(&p).copied()
    }

    pub fn points_of(&self, v: ViewpointId) -> impl Iterator<Item = PointId> + '_ {
        self.by_viewpoint.get(&v).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.by_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_point.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PointId, ViewpointId)> + '_ {
        self.by_point.iter().map(|(p, v)| (*p, *v))
    }

    /// Both maps describe the same relation.
    pub fn is_consistent(&self) -> bool {
        let n: usize = self.by_viewpoint.values().map(|s| s.len()).sum();
        n == self.by_point.len()
            && self
                .by_viewpoint
                .iter()
                .all(|(v, s)| s.iter().all(|p| self.by_point.get(p) == Some(v)))
    }
}

/// Non-extracted surface voxels grouped by connectivity, then split to the
/// extent bound.
pub fn surface_clusters(grid: &VoxelGrid, max_extent: f64) -> Vec<Vec<VoxelId>> {
    let set: BTreeSet<VoxelId> = grid.surface_voxels().filter(|v| !grid.is_extracted(*v)).collect();
    let spec = grid.spec();
    let mut out = Vec::new();
    for comp in components26(spec, &set) {
        out.extend(split_connected(spec, comp, max_extent));
    }
    out
}

fn ball_offsets(r: f64) -> Vec<[i64; 3]> {
    let k = floor(r) as i64;
    let mut out = Vec::new();
    for x in -k..=k {
        for y in -k..=k {
            for z in -k..=k {
                if ((x * x + y * y + z * z) as f64) <= r * r {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Clusters with no frontier cell within `r_near` voxels of any member.
pub fn detect_explored_surface(
    grid: &VoxelGrid,
    frontier: &BTreeSet<VoxelId>,
    clusters: Vec<Vec<VoxelId>>,
    r_near: f64,
) -> Vec<Vec<VoxelId>> {
    if frontier.is_empty() {
        return clusters;
    }
    let spec = grid.spec();
    let offs = ball_offsets(r_near);
    clusters
        .into_iter()
        .filter(|c| {
            !c.iter().any(|v| {
                let k = spec.coords(*v);
                offs.iter().any(|o| {
                    spec.id([k[0] + o[0], k[1] + o[1], k[2] + o[2]])
                        .is_some_and(|n| frontier.contains(&n))
                })
            })
        })
        .collect()
}

/// Marks every member voxel extracted and returns its stored points, each
/// exactly once over the grid's lifetime. Normals are left zero.
pub fn extract_new_points(grid: &mut VoxelGrid, s_exp: &[Vec<VoxelId>], next_id: &mut u64) -> Vec<SurfacePoint> {
    let mut out = Vec::new();
    for cluster in s_exp {
        for &v in cluster {
            if !grid.mark_extracted(v) {
                continue;
            }
            for p in grid.points(v) {
                out.push(SurfacePoint {
                    id: PointId(*next_id),
                    position: *p,
                    normal: Vec3::ZERO,
                    voxel: v,
                    covered: false,
                });
                *next_id += 1;
            }
        }
    }
    out
}

const NORMAL_RING_MAX: i64 = 3;

/// Least-squares plane normal of the `k` stored points nearest to `p`, or
/// `None` with fewer than three points nearby.
pub fn knn_normal(grid: &VoxelGrid, p: Vec3, voxel: VoxelId, k: usize) -> Option<Vec3> {
    let spec = grid.spec();
    let c = spec.coords(voxel);
    let mut found: Vec<(f64, Vec3)> = Vec::new();
    for r in 0..=NORMAL_RING_MAX {
        for x in -r..=r {
            for y in -r..=r {
                for z in -r..=r {
                    if x.abs().max(y.abs()).max(z.abs()) != r {
                        continue;
                    }
                    if let Some(n) = spec.id([c[0] + x, c[1] + y, c[2] + z]) {
                        for q in grid.points(n) {
                            found.push((q.dist_sq(p), *q));
                        }
                    }
                }
            }
        }
        if found.len() >= k {
            found.sort_by(|a, b| a.0.total_cmp(&b.0));
            let reach = r as f64 * spec.resolution;
            if found[k - 1].0 <= reach * reach {
                break;
            }
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found.truncate(k);
    if found.len() < 3 {
        return None;
    }
    let pts: Vec<Vec3> = found.iter().map(|f| f.1).collect();
    let (_, cov) = mean_and_covariance(&pts)?;
    let (_, vecs) = symmetric_eigen(&cov);
    vecs[0].normalized()
}

/// Direction toward the voxel's free face neighbours.
pub fn face_normal(grid: &VoxelGrid, voxel: VoxelId) -> Vec3 {
    let spec = grid.spec();
    let mut s = Vec3::ZERO;
    for o in NEIGHBORS6.iter() {
        if spec.offset(voxel, *o).is_some_and(|n| grid.is_free(n)) {
            s += Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64);
        }
    }
    s.normalized().unwrap_or(Vec3::Z)
}

pub fn estimate_normals(points: &mut [SurfacePoint], grid: &VoxelGrid, k: usize) {
    for p in points.iter_mut() {
        p.normal = knn_normal(grid, p.position, p.voxel, k).unwrap_or_else(|| face_normal(grid, p.voxel));
    }
}

/// Camera pose at `standoff` along `n` from `pt`, looking back along `-n`.
pub fn viewpoint_from_normal(pt: Vec3, n: Vec3, standoff: f64) -> CameraPose {
    let h = sqrt(n.x * n.x + n.y * n.y);
    let pitch = atan2(n.z, h);
    let yaw = if n.z.abs() > 0.999 { 0.0 } else { atan2(-n.y, -n.x) };
    CameraPose::new(pt + n * standoff, pitch, yaw)
}

fn pose_ok(grid: &VoxelGrid, field: &DistanceField, p: Vec3, r_s: f64) -> bool {
    grid.spec()
        .voxel_of(p)
        .is_some_and(|v| grid.is_free(v) && field.at_voxel(v) >= r_s)
}

/// Two candidates per point (both normal signs), kept when the position is
/// free with clearance and the ray back to the point is unobstructed. Ids
/// are assigned sequentially from `first_id`.
pub fn sample_viewpoints(
    pts: &[SurfacePoint],
    grid: &VoxelGrid,
    field: &DistanceField,
    params: &CoverageParams,
    first_id: u32,
) -> Vec<Viewpoint5D> {
    let spec = grid.spec();
    let mut out = Vec::new();
    for p in pts {
        let Some(pv) = spec.voxel_of(p.position) else {
            continue;
        };
        for sign in [1.0, -1.0] {
            let pose = viewpoint_from_normal(p.position, p.normal * sign, params.standoff);
            if !pose_ok(grid, field, pose.position, params.safety_radius) {
                continue;
            }
            if grid.raycast(pose.position, p.position) != RayHit::ReachedOccupied(pv) {
                continue;
            }
            out.push(Viewpoint5D::new(ViewpointId(first_id + out.len() as u32), pose));
        }
    }
    out
}

type Bucket = [i64; 3];

fn bucket_of(p: Vec3, cell: f64) -> Bucket {
    [floor(p.x / cell) as i64, floor(p.y / cell) as i64, floor(p.z / cell) as i64]
}

fn bucketize(pts: impl Iterator<Item = (usize, Vec3)>, cell: f64) -> BTreeMap<Bucket, Vec<usize>> {
    let mut m: BTreeMap<Bucket, Vec<usize>> = BTreeMap::new();
    for (i, p) in pts {
        m.entry(bucket_of(p, cell)).or_default().push(i);
    }
    m
}

fn near<'a>(m: &'a BTreeMap<Bucket, Vec<usize>>, p: Vec3, cell: f64) -> impl Iterator<Item = usize> + 'a {
    let b = bucket_of(p, cell);
    let mut keys = Vec::with_capacity(27);
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                keys.push([b[0] + x, b[1] + y, b[2] + z]);
            }
        }
    }
    keys.into_iter().flat_map(move |k| m.get(&k).into_iter().flat_map(|v| v.iter().copied()))
}

/// Counts visible points per (non-dormant) candidate and gives every visible
/// point to the seeing candidate with the most observations, lower id first
/// on ties.
pub fn evaluate_coverage(
    cands: &mut [Viewpoint5D],
    pts: &[SurfacePoint],
    grid: &VoxelGrid,
    cam: &CameraModel,
) -> CoverageIndex {
    let cell = cam.max_view_dist;
    let buckets = bucketize(pts.iter().enumerate().map(|(i, p)| (i, p.position)), cell);
    let mut seers: Vec<Vec<usize>> = vec![Vec::new(); pts.len()];
    for (ci, c) in cands.iter_mut().enumerate() {
        c.n_obs = 0;
        c.n_cover = 0;
        if c.dormant {
            continue;
        }
        let mut seen: Vec<usize> = near(&buckets, c.pose.position, cell)
            .filter(|&pi| camera_visible(grid, &c.pose, pts[pi].position, cam))
            .collect();
        seen.sort_unstable();
        c.n_obs = seen.len();
        for pi in seen {
            seers[pi].push(ci);
        }
    }
    let mut index = CoverageIndex::default();
    for (pi, s) in seers.iter().enumerate() {
        let best = s.iter().copied().max_by(|&a, &b| {
            cands[a]
                .n_obs
                .cmp(&cands[b].n_obs)
                .then_with(|| cands[b].id.cmp(&cands[a].id))
        });
        if let Some(ci) = best {
            cands[ci].n_cover += 1;
            index.insert(pts[pi].id, cands[ci].id);
        }
    }
    index
}

/// One sweep of the gravitation-like merge in descending `n_cover`. Each
/// active viewpoint pulls its active neighbours within `merge_radius` into a
/// weighted pose update and marks them dormant. Poses that end up invalid
/// are reverted.
pub fn gravitation_update(cands: &mut [Viewpoint5D], grid: &VoxelGrid, field: &DistanceField, params: &CoverageParams) {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].n_cover.cmp(&cands[a].n_cover).then(cands[a].id.cmp(&cands[b].id)));
    let mut done = vec![false; cands.len()];
    let r2 = params.merge_radius * params.merge_radius;
    for &i in &order {
        if cands[i].dormant {
            continue;
        }
        done[i] = true;
        if cands[i].n_cover == 0 {
            continue;
        }
        let pi = cands[i].pose;
        let ni = cands[i].n_cover as f64;
        let mut pos = pi.position;
        let mut pitch = pi.pitch;
        let ui = Vec3::new(cos(pi.yaw), sin(pi.yaw), 0.0);
        let mut u = ui;
        let mut absorbed = Vec::new();
        for (q, c) in cands.iter().enumerate() {
            if q == i || c.dormant || done[q] || c.pose.position.dist_sq(pi.position) > r2 {
                continue;
            }
            let w = c.n_cover as f64 / ni;
            pos += (c.pose.position - pi.position) * w;
            pitch += (c.pose.pitch - pi.pitch) * w;
            u += (Vec3::new(cos(c.pose.yaw), sin(c.pose.yaw), 0.0) - ui) * w;
            absorbed.push(q);
        }
        if absorbed.is_empty() {
            continue;
        }
        for q in absorbed {
            cands[q].dormant = true;
        }
        let yaw = if u.norm() > 1e-9 { atan2(u.y, u.x) } else { pi.yaw };
        if pose_ok(grid, field, pos, params.safety_radius) {
            cands[i].pose = CameraPose::new(pos, pitch.clamp(-PI / 2.0, PI / 2.0), yaw);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CycleReport {
    pub new_points: usize,
    /// Points carried into this cycle from earlier ones.
    pub residual_points: usize,
    pub new_viewpoints: Vec<Viewpoint5D>,
    pub rounds: usize,
    /// Covered share of the points handled this cycle.
    pub cycle_coverage: f64,
    /// Round budget ran out below the threshold.
    pub warning: bool,
}

/// Published viewpoints, every extracted point and who covers it.
#[derive(Clone, Debug)]
pub struct CoverageState {
    pub params: CoverageParams,
    viewpoints: Vec<Viewpoint5D>,
    points: Vec<SurfacePoint>,
    slot: BTreeMap<PointId, usize>,
    index: CoverageIndex,
    residual: Vec<(usize, u32)>,
    next_point: u64,
    next_viewpoint: u32,
    abandoned: usize,
}

impl CoverageState {
    pub fn new(params: CoverageParams) -> Self {
        CoverageState {
            params,
            viewpoints: Vec::new(),
            points: Vec::new(),
            slot: BTreeMap::new(),
            index: CoverageIndex::default(),
            residual: Vec::new(),
            next_point: 0,
            next_viewpoint: 0,
            abandoned: 0,
        }
    }

    /// Published viewpoints in id order.
    pub fn viewpoints(&self) -> &[Viewpoint5D] {
        &self.viewpoints
    }

    pub fn points(&self) -> &[SurfacePoint] {
        &self.points
    }

    pub fn index(&self) -> &CoverageIndex {
        &self.index
    }

    pub fn covered_points(&self) -> usize {
        self.index.len()
    }

    /// Uncovered points still waiting for a retry.
    pub fn pending_points(&self) -> usize {
        self.residual.len()
    }

    /// Points given up after repeated failed cycles.
    pub fn abandoned_points(&self) -> usize {
        self.abandoned
    }

    /// Covered share of all extracted points (1 when nothing is extracted).
    pub fn coverage_rate(&self) -> f64 {
        if self.points.is_empty() {
            1.0
        } else {
            self.index.len() as f64 / self.points.len() as f64
        }
    }

    /// Extracts explored surface from the grid and covers it.
    pub fn cycle(
        &mut self,
        grid: &mut VoxelGrid,
        field: &DistanceField,
        frontier: &BTreeSet<VoxelId>,
        cam: &CameraModel,
    ) -> CycleReport {
        let clusters = surface_clusters(grid, self.params.cluster_extent);
        let s_exp = detect_explored_surface(grid, frontier, clusters, self.params.near_frontier);
        let mut pts = extract_new_points(grid, &s_exp, &mut self.next_point);
        estimate_normals(&mut pts, grid, self.params.normal_k);
        self.ingest(pts, grid, field, cam)
    }

    /// Covers `new_points` (plus any residual) and publishes the viewpoints
    /// that survive.
    pub fn ingest(
        &mut self,
        new_points: Vec<SurfacePoint>,
        grid: &VoxelGrid,
        field: &DistanceField,
        cam: &CameraModel,
    ) -> CycleReport {
        let mut report = CycleReport {
            new_points: new_points.len(),
            residual_points: self.residual.len(),
            ..CycleReport::default()
        };
        let mut work: Vec<(usize, u32)> = core::mem::take(&mut self.residual);
        for mut p in new_points {
            p.covered = false;
            self.next_point = self.next_point.max(p.id.0 + 1);
            self.slot.insert(p.id, self.points.len());
            work.push((self.points.len(), 0));
            self.points.push(p);
        }
        if work.is_empty() {
            report.cycle_coverage = 1.0;
            return report;
        }
        let total = work.len();
        let mut covered = 0usize;

        // points already seen by a published viewpoint
        let cell = cam.max_view_dist;
        let hq = bucketize(self.viewpoints.iter().enumerate().map(|(i, v)| (i, v.pose.position)), cell);
        let mut unc: Vec<(usize, u32)> = Vec::new();
        for (slot, age) in work {
            let p = self.points[slot].position;
            let mut by: Vec<usize> = near(&hq, p, cell)
                .filter(|&vi| camera_visible(grid, &self.viewpoints[vi].pose, p, cam))
                .collect();
            by.sort_unstable();
            if let Some(&vi) = by.first() {
                self.mark(slot, self.viewpoints[vi].id);
                covered += 1;
            } else {
                unc.push((slot, age));
            }
        }

        let mut accepted: Vec<(Viewpoint5D, Vec<usize>)> = Vec::new();
        let mut temp_id = 0u32;
        while (covered as f64) < self.params.threshold * total as f64 && report.rounds < self.params.max_rounds {
            report.rounds += 1;
            let unc_pts: Vec<SurfacePoint> = unc.iter().map(|(s, _)| self.points[*s]).collect();
            let mut seen_voxels = BTreeSet::new();
            let reps: Vec<SurfacePoint> = unc_pts.iter().filter(|p| seen_voxels.insert(p.voxel)).copied().collect();
            let mut cands = sample_viewpoints(&reps, grid, field, &self.params, temp_id);
            temp_id += cands.len() as u32;
            if cands.is_empty() {
                break;
            }
            evaluate_coverage(&mut cands, &unc_pts, grid, cam);
            gravitation_update(&mut cands, grid, field, &self.params);
            let mut survivors: Vec<Viewpoint5D> = cands.into_iter().filter(|c| !c.dormant).collect();
            let idx = evaluate_coverage(&mut survivors, &unc_pts, grid, cam);
            let mut newly = 0;
            let pos_of: BTreeMap<PointId, usize> = unc_pts.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
            let mut taken = vec![false; unc.len()];
            for s in survivors.into_iter().filter(|s| s.n_cover > 0) {
                let members: Vec<usize> = idx
                    .points_of(s.id)
                    .map(|pid| {
                        let k = pos_of[&pid];
                        taken[k] = true;
                        unc[k].0
                    })
                    .collect();
                newly += members.len();
                accepted.push((s, members));
            }
            covered += newly;
            unc = unc
                .into_iter()
                .zip(taken)
                .filter(|(_, t)| !t)
                .map(|(u, _)| u)
                .collect();
            if newly == 0 {
                break;
            }
        }

        for (mut vp, members) in accepted {
            vp.id = ViewpointId(self.next_viewpoint);
            vp.dormant = false;
            self.next_viewpoint += 1;
            for slot in members {
                self.mark(slot, vp.id);
            }
            self.viewpoints.push(vp);
            report.new_viewpoints.push(vp);
        }
        report.cycle_coverage = covered as f64 / total as f64;
        report.warning = report.cycle_coverage < self.params.threshold && report.rounds >= self.params.max_rounds;
        for (slot, age) in unc {
            if age + 1 >= self.params.residual_cycles {
                self.abandoned += 1;
            } else {
                self.residual.push((slot, age + 1));
            }
        }
        report
    }

    fn mark(&mut self, slot: usize, vp: ViewpointId) {
        self.points[slot].covered = true;
        self.index.insert(self.points[slot].id, vp);
    }

    /// Re-checks every cover record with the visibility test.
    pub fn verify_soundness(&self, grid: &VoxelGrid, cam: &CameraModel) -> bool {
        self.index.is_consistent()
            && self.index.iter().all(|(pid, vid)| {
                let p = &self.points[self.slot[&pid]];
                let v = &self.viewpoints[vid.0 as usize];
                camera_visible(grid, &v.pose, p.position, cam)
            })
    }
}

/// Grid spec helper for tests and callers building point sets by hand.
pub fn point_at(spec: &GridSpec, id: u64, p: Vec3, normal: Vec3) -> Option<SurfacePoint> {
    Some(SurfacePoint {
        id: PointId(id),
        position: p,
        normal,
        voxel: spec.voxel_of(p)?,
        covered: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{acos, to_radians, Aabb};
    use crate::world::{distance_field, VoxelState};

    fn grid(n: [f64; 3], res: f64, fill: VoxelState) -> VoxelGrid {
        let spec = GridSpec::new(Aabb::new(Vec3::ZERO, Vec3::new(n[0], n[1], n[2])), res).unwrap();
        VoxelGrid::new(spec, fill)
    }

    fn cam() -> CameraModel {
        CameraModel::with_standoff(5.0)
    }

    /// Wall one voxel thick at x in [10, 10.5), y,z in [lo, hi), with points
    /// on its -x face.
    fn wall(g: &mut VoxelGrid, lo: f64, hi: f64) {
        let r = g.spec().resolution;
        let n = ((hi - lo) / r) as usize;
        for i in 0..n {
            for j in 0..n {
                let p = Vec3::new(10.0 + 0.01, lo + (i as f64 + 0.5) * r, lo + (j as f64 + 0.5) * r);
                let v = g.spec().voxel_of(p).unwrap();
                g.set_state(v, VoxelState::Occupied);
                g.insert_point(v, p);
                g.insert_point(v, p + Vec3::new(0.0, 0.1, 0.1));
            }
        }
    }

    #[test]
    fn eq3_substitution() {
        let a = viewpoint_from_normal(Vec3::ZERO, Vec3::new(-1.0, 0.0, 0.0), 5.0);
        assert_eq!(a.position, Vec3::new(-5.0, 0.0, 0.0));
        assert_eq!(a.pitch, 0.0);
        assert_eq!(a.yaw, 0.0);
        let b = viewpoint_from_normal(Vec3::ZERO, Vec3::Z, 5.0);
        assert_eq!(b.position, Vec3::new(0.0, 0.0, 5.0));
        assert!((b.pitch - PI / 2.0).abs() < 1e-15);
        assert_eq!(b.yaw, 0.0);
        // the optical axis points back at the surface
        let n = Vec3::new(0.3, -0.5, 0.4).normalized().unwrap();
        let c = viewpoint_from_normal(Vec3::ZERO, n, 5.0);
        assert!((c.forward() + n).norm() < 1e-12);
    }

    #[test]
    fn zero_frontiers_keep_all_clusters() {
        let mut g = grid([20.0; 3], 0.5, VoxelState::Free);
        wall(&mut g, 8.0, 12.0);
        let cl = surface_clusters(&g, 4.0);
        assert!(!cl.is_empty());
        let n = cl.len();
        assert_eq!(detect_explored_surface(&g, &BTreeSet::new(), cl, 2.0).len(), n);
        let empty = grid([5.0; 3], 0.5, VoxelState::Free);
        assert!(surface_clusters(&empty, 4.0).is_empty());
    }

    #[test]
    fn frontier_band_excludes_nearby_cluster() {
        let mut g = grid([20.0; 3], 0.5, VoxelState::Free);
        wall(&mut g, 4.0, 16.0);
        let clusters = surface_clusters(&g, 4.0);
        // a frontier cell just in front of the wall's low corner
        let f = g.spec().voxel_of(Vec3::new(9.75, 4.25, 4.25)).unwrap();
        let frontier: BTreeSet<_> = [f].into_iter().collect();
        let kept = detect_explored_surface(&g, &frontier, clusters.clone(), 2.0);
        assert_eq!(kept.len(), clusters.len() - 1);
        // oracle: the excluded cluster is the one with a member within 2 voxels
        let fc = g.spec().coords(f);
        for c in &clusters {
            let close = c.iter().any(|v| {
                let k = g.spec().coords(*v);
                let d2 = (0..3).map(|i| (k[i] - fc[i]).pow(2)).sum::<i64>();
                d2 <= 4
            });
            assert_eq!(!close, kept.contains(c));
        }
    }

    #[test]
    fn extraction_is_exactly_once() {
        let mut g = grid([20.0; 3], 0.5, VoxelState::Free);
        let mut cells = Vec::new();
        for k in 0..3 {
            let p = Vec3::new(5.1 + 0.5 * k as f64, 5.1, 5.1);
            let v = g.spec().voxel_of(p).unwrap();
            g.set_state(v, VoxelState::Occupied);
            g.insert_point(v, p);
            g.insert_point(v, p + Vec3::new(0.2, 0.2, 0.2));
            cells.push(v);
        }
        let mut id = 0;
        let a = extract_new_points(&mut g, &[cells.clone()], &mut id);
        assert_eq!(a.len(), 6);
        let b = extract_new_points(&mut g, &[cells], &mut id);
        assert!(b.is_empty());
        assert_eq!(g.extraction_events(), 3);
    }

    #[test]
    fn plane_normals_exact() {
        let mut g = grid([10.0; 3], 0.5, VoxelState::Free);
        let mut pts = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let p = Vec3::new(2.0 + 0.37 * i as f64, 2.0 + 0.41 * j as f64, 5.1);
                let v = g.spec().voxel_of(p).unwrap();
                g.set_state(v, VoxelState::Occupied);
                g.insert_point(v, p);
                pts.push(point_at(g.spec(), pts.len() as u64, p, Vec3::ZERO).unwrap());
            }
        }
        estimate_normals(&mut pts, &g, 10);
        for p in &pts {
            assert!((p.normal.z.abs() - 1.0).abs() < 1e-6, "{:?}", p.normal);
        }
    }

    #[test]
    fn sphere_normals_radial() {
        let mut g = grid([20.0; 3], 0.5, VoxelState::Free);
        let c = Vec3::new(10.0, 10.0, 10.0);
        let n = 3000;
        let golden = PI * (3.0 - sqrt(5.0));
        let mut pts = Vec::new();
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = sqrt(1.0 - z * z);
            let th = golden * i as f64;
            let p = c + Vec3::new(r * cos(th), r * sin(th), z) * 5.0;
            let v = g.spec().voxel_of(p).unwrap();
            if g.state(v) != VoxelState::Occupied {
                g.set_state(v, VoxelState::Occupied);
            }
            g.insert_point(v, p);
            pts.push(point_at(g.spec(), i as u64, p, Vec3::ZERO).unwrap());
        }
        estimate_normals(&mut pts, &g, 10);
        for p in &pts {
            let radial = (p.position - c).normalized().unwrap();
            let ang = acos(p.normal.dot(radial).abs().min(1.0));
            assert!(ang < to_radians(5.0), "{}", ang);
        }
    }

    #[test]
    fn isolated_voxel_falls_back_to_face() {
        let mut g = grid([5.0; 3], 0.5, VoxelState::Unknown);
        let p = Vec3::new(2.1, 2.1, 2.1);
        let v = g.spec().voxel_of(p).unwrap();
        g.set_state(v, VoxelState::Occupied);
        g.insert_point(v, p);
        g.insert_point(v, p + Vec3::new(0.1, 0.2, 0.05));
        let up = g.spec().offset(v, [0, 0, 1]).unwrap();
        g.set_state(up, VoxelState::Free);
        let mut pts = vec![
            point_at(g.spec(), 0, p, Vec3::ZERO).unwrap(),
            point_at(g.spec(), 1, p + Vec3::new(0.1, 0.2, 0.05), Vec3::ZERO).unwrap(),
        ];
        estimate_normals(&mut pts, &g, 10);
        for p in &pts {
            assert_eq!(p.normal, Vec3::Z);
        }
    }

    #[test]
    fn wall_blocks_back_candidate() {
        let mut g = grid([30.0, 20.0, 20.0], 0.5, VoxelState::Free);
        // thick block behind the wall surface at x = 10
        for v in g.ids().collect::<Vec<_>>() {
            let c = g.spec().center(v);
            if c.x > 10.0 && c.x < 14.0 && (6.0..14.0).contains(&c.y) && (6.0..14.0).contains(&c.z) {
                g.set_state(v, VoxelState::Occupied);
            }
        }
        let field = distance_field(&g, 5.0);
        let p = point_at(g.spec(), 0, Vec3::new(10.01, 10.1, 10.1), Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        let c = sample_viewpoints(&[p], &g, &field, &CoverageParams::default(), 0);
        assert_eq!(c.len(), 1);
        assert!((c[0].pose.position - Vec3::new(5.01, 10.1, 10.1)).norm() < 1e-12);
    }

    #[test]
    fn single_viewpoint_counts() {
        let mut g = grid([30.0, 20.0, 20.0], 0.5, VoxelState::Free);
        wall(&mut g, 9.0, 11.0);
        let pts: Vec<SurfacePoint> = [9.3, 10.0, 10.7]
            .iter()
            .enumerate()
            .map(|(i, y)| point_at(g.spec(), i as u64, Vec3::new(10.01, *y, 10.2), Vec3::X).unwrap())
            .collect();
        let mut c = vec![Viewpoint5D::new(ViewpointId(0), CameraPose::new(Vec3::new(5.0, 10.0, 10.2), 0.0, 0.0))];
        let idx = evaluate_coverage(&mut c, &pts, &g, &cam());
        assert_eq!((c[0].n_obs, c[0].n_cover), (3, 3));
        assert_eq!(idx.len(), 3);
        assert!(idx.is_consistent());
    }

    #[test]
    fn tie_goes_to_lower_id() {
        let mut g = grid([30.0, 30.0, 20.0], 0.5, VoxelState::Free);
        wall(&mut g, 4.0, 16.0);
        let mk = |i: u64, y: f64| point_at(g.spec(), i, Vec3::new(10.01, y, 10.2), Vec3::X).unwrap();
        // narrow cameras: A sees p1,p2; B sees p2,p3
        let narrow = CameraModel {
            fov_h: 40.0,
            fov_v: 40.0,
            max_view_dist: 12.5,
        };
        let pts = vec![mk(1, 7.1), mk(2, 9.1), mk(3, 11.1)];
        let mut c = vec![
            Viewpoint5D::new(ViewpointId(5), CameraPose::new(Vec3::new(5.0, 8.0, 10.2), 0.0, 0.0)),
            Viewpoint5D::new(ViewpointId(6), CameraPose::new(Vec3::new(5.0, 10.0, 10.2), 0.0, 0.0)),
        ];
        let idx = evaluate_coverage(&mut c, &pts, &g, &narrow);
        assert_eq!((c[0].n_obs, c[1].n_obs), (2, 2));
        assert_eq!(idx.cover_of(PointId(2)), Some(ViewpointId(5)));
        assert_eq!((c[0].n_cover, c[1].n_cover), (2, 1));
        for ci in &c {
            assert!(ci.n_cover <= ci.n_obs);
        }
    }

    #[test]
    fn gravitation_example() {
        let g = grid([20.0; 3], 0.5, VoxelState::Free);
        let field = distance_field(&g, 5.0);
        let mut c = vec![
            Viewpoint5D::new(ViewpointId(0), CameraPose::new(Vec3::new(5.0, 5.0, 5.0), 0.2, 0.0)),
            Viewpoint5D::new(ViewpointId(1), CameraPose::new(Vec3::new(7.0, 5.0, 5.0), 0.4, 0.0)),
        ];
        c[0].n_cover = 10;
        c[1].n_cover = 5;
        gravitation_update(&mut c, &g, &field, &CoverageParams::default());
        assert!((c[0].pose.position - Vec3::new(6.0, 5.0, 5.0)).norm() < 1e-12);
        assert!((c[0].pose.pitch - 0.3).abs() < 1e-12);
        assert!(!c[0].dormant && c[1].dormant);
    }

    #[test]
    fn gravitation_isolated_unchanged() {
        let g = grid([20.0; 3], 0.5, VoxelState::Free);
        let field = distance_field(&g, 5.0);
        let pose = CameraPose::new(Vec3::new(5.0, 5.0, 5.0), 0.2, 1.0);
        let mut c = vec![
            Viewpoint5D::new(ViewpointId(0), pose),
            Viewpoint5D::new(ViewpointId(1), CameraPose::new(Vec3::new(15.0, 5.0, 5.0), 0.0, 0.0)),
        ];
        c[0].n_cover = 3;
        c[1].n_cover = 3;
        gravitation_update(&mut c, &g, &field, &CoverageParams::default());
        assert_eq!(c[0].pose, pose);
        assert!(!c[0].dormant && !c[1].dormant);
    }

    #[test]
    fn gravitation_three_mutual_one_survives() {
        let g = grid([20.0; 3], 0.5, VoxelState::Free);
        let field = distance_field(&g, 5.0);
        let mut c: Vec<Viewpoint5D> = (0..3)
            .map(|i| {
                let mut v = Viewpoint5D::new(
                    ViewpointId(i),
                    CameraPose::new(Vec3::new(5.0 + i as f64, 5.0, 5.0), 0.0, 0.0),
                );
                v.n_cover = 3 + i as usize;
                v
            })
            .collect();
        gravitation_update(&mut c, &g, &field, &CoverageParams::default());
        assert_eq!(c.iter().filter(|v| !v.dormant).count(), 1);
        assert!(!c[2].dormant);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn yaw_blend_crosses_seam() {
        let g = grid([20.0; 3], 0.5, VoxelState::Free);
        let field = distance_field(&g, 5.0);
        let mut c = vec![
            Viewpoint5D::new(ViewpointId(0), CameraPose::new(Vec3::new(5.0, 5.0, 5.0), 0.0, PI - 0.1)),
            Viewpoint5D::new(ViewpointId(1), CameraPose::new(Vec3::new(6.0, 5.0, 5.0), 0.0, -PI + 0.1)),
        ];
        c[0].n_cover = 8;
        c[1].n_cover = 4;
        gravitation_update(&mut c, &g, &field, &CoverageParams::default());
        assert!((crate::geom::angle_dist(c[0].pose.yaw, PI)).abs() < 1e-9);
    }

    #[test]
    fn empty_cycle_changes_nothing() {
        let g = grid([20.0; 3], 0.5, VoxelState::Free);
        let field = distance_field(&g, 5.0);
        let mut s = CoverageState::new(CoverageParams::default());
        let r = s.ingest(Vec::new(), &g, &field, &cam());
        assert!(r.new_viewpoints.is_empty());
        assert!(s.viewpoints().is_empty());
    }

    #[test]
    fn flat_patch_needs_one_viewpoint() {
        let mut g = grid([30.0, 20.0, 20.0], 0.5, VoxelState::Free);
        wall(&mut g, 8.0, 12.0);
        let field = distance_field(&g, 5.0);
        let mut s = CoverageState::new(CoverageParams::default());
        let r = s.cycle(&mut g, &field, &BTreeSet::new(), &cam());
        assert_eq!(r.new_points, 8 * 8 * 2);
        assert_eq!(r.new_viewpoints.len(), 1, "{:?}", r.new_viewpoints);
        assert!(r.cycle_coverage >= 0.95);
        assert!(s.verify_soundness(&g, &cam()));
        // a second cycle finds nothing new
        let r2 = s.cycle(&mut g, &field, &BTreeSet::new(), &cam());
        assert_eq!(r2.new_points, 0);
        assert_eq!(s.viewpoints().len(), 1);
    }
}
