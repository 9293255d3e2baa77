//! Explorer logic: surface frontiers, their clusters, exploration viewpoints
//! and the next-target tour.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{atan2, cos, sin, Pose, Vec3, PI};
use crate::linalg::{mean_and_covariance, symmetric_eigen};
use crate::routes::{atsp_from_lengths, build_atsp_matrix, solve_atsp, AtspMatrix, MoveLimits};
use crate::world::{
    sweep_lengths, DistanceField, GridSpec, MoveGraph, RayHit, VoxelGrid, VoxelId, VoxelState, NEIGHBORS26, NEIGHBORS6,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreParams {
    /// metres, along the first principal axis
    pub max_extent: f64,
    pub radii: Vec<f64>,
    pub heights: Vec<f64>,
    pub yaw_count: usize,
    /// metres
    pub safety_radius: f64,
    /// Give up on frontier cells after this much accumulated failure weight.
    pub retire_after: u32,
}

impl Default for ExploreParams {
    fn default() -> Self {
        ExploreParams {
            max_extent: 4.0,
            radii: vec![3.0, 5.0],
            heights: vec![-2.0, 0.0, 2.0],
            yaw_count: 12,
            safety_radius: 0.8,
            retire_after: 15,
        }
    }
}

/// Weight added to a cell each cycle its cluster stays dormant.
pub const DORMANT_WEIGHT: u32 = 1;
/// Weight added when the explorer reached (or failed to reach) a cluster's
/// viewpoint and the cell is still a frontier.
pub const VISIT_WEIGHT: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationViewpoint {
    pub pose: Pose,
    pub visible: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierCluster {
    pub id: ClusterId,
    /// sorted
    pub cells: Vec<VoxelId>,
    pub centroid: Vec3,
    /// `None` while dormant.
    pub viewpoint: Option<ExplorationViewpoint>,
}

impl FrontierCluster {
    pub fn is_dormant(&self) -> bool {
        self.viewpoint.is_none()
    }
}

/// Free voxel with an occupied and an unknown face neighbour that share an
/// edge.
pub fn is_surface_frontier(grid: &VoxelGrid, v: VoxelId) -> bool {
    if grid.state(v) != VoxelState::Free {
        return false;
    }
    let spec = grid.spec();
    let mut occ = [false; 6];
    let mut ukn = [false; 6];
    for (k, o) in NEIGHBORS6.iter().enumerate() {
        if let Some(n) = spec.offset(v, *o) {
            match grid.state(n) {
                VoxelState::Occupied => occ[k] = true,
                VoxelState::Unknown => ukn[k] = true,
                VoxelState::Free => {}
            }
        }
    }
    // NEIGHBORS6 is ordered ±x, ±y, ±z: k / 2 is the axis
    (0..6).any(|i| occ[i] && (0..6).any(|j| ukn[j] && i / 2 != j / 2))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrontierUpdate {
    pub removed: Vec<ClusterId>,
    pub added: Vec<ClusterId>,
}

/// Incrementally maintained surface-frontier cells and their clusters.
#[derive(Clone, Debug, Default)]
pub struct FrontierMap {
    cells: BTreeSet<VoxelId>,
    owner: BTreeMap<VoxelId, ClusterId>,
    clusters: BTreeMap<ClusterId, FrontierCluster>,
    weight: BTreeMap<VoxelId, u32>,
    retired: BTreeSet<VoxelId>,
    next_id: u32,
}

impl FrontierMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every voxel currently satisfying the frontier predicate.
    pub fn cells(&self) -> &BTreeSet<VoxelId> {
        &self.cells
    }

    /// Frontier cells the explorer has given up on.
    pub fn retired(&self) -> &BTreeSet<VoxelId> {
        &self.retired
    }

    pub fn clusters(&self) -> impl Iterator<Item = &FrontierCluster> {
        self.clusters.values()
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&FrontierCluster> {
        self.clusters.get(&id)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Re-evaluates the predicate around `changed` and rebuilds every cluster
    /// those changes touch. Untouched clusters keep their ids.
    pub fn detect(&mut self, grid: &VoxelGrid, changed: &BTreeSet<VoxelId>, max_extent: f64) -> FrontierUpdate {
        let spec = grid.spec();
        let mut affected = BTreeSet::new();
        for &v in changed {
            affected.insert(v);
            affected.extend(spec.neighbors6(v));
        }
        let mut touched: BTreeSet<ClusterId> = BTreeSet::new();
        let mut fresh = Vec::new();
        for &v in &affected {
            let now = is_surface_frontier(grid, v);
            let was = self.cells.contains(&v);
            if now && !was {
                self.cells.insert(v);
                fresh.push(v);
            } else if !now && was {
                self.cells.remove(&v);
                self.weight.remove(&v);
                self.retired.remove(&v);
            }
            if let Some(c) = self.owner.get(&v) {
                touched.insert(*c);
            }
        }
        for &v in &fresh {
            for n in spec.neighbors26(v) {
                if let Some(c) = self.owner.get(&n) {
                    touched.insert(*c);
                }
            }
        }
        let mut pool: BTreeSet<VoxelId> = fresh.into_iter().filter(|v| !self.retired.contains(v)).collect();
        self.rebuild(spec, touched, &mut pool, max_extent)
    }

    fn rebuild(
        &mut self,
        spec: &GridSpec,
        touched: BTreeSet<ClusterId>,
        pool: &mut BTreeSet<VoxelId>,
        max_extent: f64,
    ) -> FrontierUpdate {
        let mut up = FrontierUpdate::default();
        for id in touched {
            if let Some(c) = self.clusters.remove(&id) {
                for v in c.cells {
                    self.owner.remove(&v);
                    if self.cells.contains(&v) && !self.retired.contains(&v) {
                        pool.insert(v);
                    }
                }
                up.removed.push(id);
            }
        }
        for comp in components26(spec, pool) {
            for part in split_connected(spec, comp, max_extent) {
                let id = ClusterId(self.next_id);
                self.next_id += 1;
                for v in &part {
                    self.owner.insert(*v, id);
                }
                let centroid = centroid_of(spec, &part);
                self.clusters.insert(
                    id,
                    FrontierCluster {
                        id,
                        cells: part,
                        centroid,
                        viewpoint: None,
                    },
                );
                up.added.push(id);
            }
        }
        up
    }

    /// Samples viewpoints for new and dormant clusters and re-validates the
    /// rest. Cells of clusters left dormant accumulate failure weight.
    pub fn refresh_viewpoints(&mut self, grid: &VoxelGrid, field: &DistanceField, params: &ExploreParams) {
        let mut dormant_cells = Vec::new();
        for c in self.clusters.values_mut() {
            let still_valid = c
                .viewpoint
                .map(|vp| candidate_ok(grid, field, vp.pose.position, params.safety_radius))
                .unwrap_or(false);
            if !still_valid {
                c.viewpoint = sample_exploration_viewpoint(c, grid, field, params);
            }
            if c.viewpoint.is_none() {
                dormant_cells.extend(c.cells.iter().copied());
            }
        }
        self.add_weight(grid.spec(), &dormant_cells, DORMANT_WEIGHT, params);
    }

    /// Records a failed or fruitless visit to the given cells.
    pub fn record_attempt(&mut self, spec: &GridSpec, cells: &[VoxelId], params: &ExploreParams) {
        self.add_weight(spec, cells, VISIT_WEIGHT, params);
    }

    fn add_weight(&mut self, spec: &GridSpec, cells: &[VoxelId], w: u32, params: &ExploreParams) {
        let mut newly = Vec::new();
        for v in cells {
            if !self.cells.contains(v) || self.retired.contains(v) {
                continue;
            }
            let e = self.weight.entry(*v).or_insert(0);
            *e += w;
            if *e >= params.retire_after {
                newly.push(*v);
            }
        }
        if newly.is_empty() {
            return;
        }
        let mut touched = BTreeSet::new();
        for v in newly {
            self.retired.insert(v);
            if let Some(c) = self.owner.get(&v) {
                touched.insert(*c);
            }
        }
        let mut pool = BTreeSet::new();
        self.rebuild(spec, touched, &mut pool, params.max_extent);
    }
}

fn centroid_of(spec: &GridSpec, cells: &[VoxelId]) -> Vec3 {
    let mut s = Vec3::ZERO;
    for v in cells {
        s += spec.center(*v);
    }
    s / cells.len().max(1) as f64
}

/// 26-connected components of `set`, each sorted, ordered by smallest id.
pub fn components26(spec: &GridSpec, set: &BTreeSet<VoxelId>) -> Vec<Vec<VoxelId>> {
    let mut seen: BTreeSet<VoxelId> = BTreeSet::new();
    let mut out = Vec::new();
    for &s in set {
        if seen.contains(&s) {
            continue;
        }
        seen.insert(s);
        let mut comp = vec![s];
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            let c = spec.coords(u);
            for o in NEIGHBORS26.iter() {
                if let Some(n) = spec.id([c[0] + o[0], c[1] + o[1], c[2] + o[2]]) {
                    if set.contains(&n) && seen.insert(n) {
                        comp.push(n);
                        stack.push(n);
                    }
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Extent of `pts` along their first principal axis, with the axis and mean.
pub fn principal_extent(pts: &[Vec3]) -> (f64, Vec3, Vec3) {
    let Some((mean, cov)) = mean_and_covariance(pts) else {
        return (0.0, Vec3::X, Vec3::ZERO);
    };
    let (_, vecs) = symmetric_eigen(&cov);
    let axis = vecs[2];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in pts {
        let t = (*p - mean).dot(axis);
        lo = lo.min(t);
        hi = hi.max(t);
    }
    (hi - lo, axis, mean)
}

/// Recursive split at the centroid plane orthogonal to the first principal
/// axis until every part fits within `max_extent`. Parts of three or fewer
/// cells are never split.
pub fn split_cluster_pca(spec: &GridSpec, cells: Vec<VoxelId>, max_extent: f64) -> Vec<Vec<VoxelId>> {
    if cells.len() <= 3 {
        return vec![cells];
    }
    let pts: Vec<Vec3> = cells.iter().map(|v| spec.center(*v)).collect();
    let (extent, axis, mean) = principal_extent(&pts);
    if extent <= max_extent {
        return vec![cells];
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (v, p) in cells.iter().zip(&pts) {
        if (*p - mean).dot(axis) <= 0.0 {
            a.push(*v);
        } else {
            b.push(*v);
        }
    }
    if a.is_empty() || b.is_empty() {
        return vec![cells];
    }
    let mut out = split_cluster_pca(spec, a, max_extent);
    out.extend(split_cluster_pca(spec, b, max_extent));
    out
}

/// PCA split followed by connected components, repeated until every part
/// is connected and within the extent bound.
pub fn split_connected(spec: &GridSpec, cells: Vec<VoxelId>, max_extent: f64) -> Vec<Vec<VoxelId>> {
    let mut out = Vec::new();
    for part in split_cluster_pca(spec, cells, max_extent) {
        let set: BTreeSet<VoxelId> = part.iter().copied().collect();
        let comps = components26(spec, &set);
        if comps.len() == 1 {
            out.push(part);
        } else {
            for c in comps {
                out.extend(split_connected(spec, c, max_extent));
            }
        }
    }
    out
}

fn candidate_ok(grid: &VoxelGrid, field: &DistanceField, p: Vec3, r_s: f64) -> bool {
    match grid.spec().voxel_of(p) {
        Some(v) => grid.is_free(v) && field.at_voxel(v) >= r_s,
        None => false,
    }
}

/// Best candidate around the centroid by the number of cluster cells it can
/// see. `None` when no candidate position is usable or none sees a cell.
pub fn sample_exploration_viewpoint(
    cluster: &FrontierCluster,
    grid: &VoxelGrid,
    field: &DistanceField,
    params: &ExploreParams,
) -> Option<ExplorationViewpoint> {
    let spec = grid.spec();
    let targets: Vec<Vec3> = cluster.cells.iter().map(|v| spec.center(*v)).collect();
    let mut best: Option<ExplorationViewpoint> = None;
    for &r in &params.radii {
        for k in 0..params.yaw_count {
            let phi = 2.0 * PI * k as f64 / params.yaw_count as f64;
            for &h in &params.heights {
                let p = cluster.centroid + Vec3::new(r * cos(phi), r * sin(phi), h);
                if !candidate_ok(grid, field, p, params.safety_radius) {
                    continue;
                }
                let visible = targets.iter().filter(|t| grid.raycast(p, **t) == RayHit::Clear).count();
                if visible == 0 || best.is_some_and(|b| b.visible >= visible) {
                    continue;
                }
                let d = cluster.centroid - p;
                best = Some(ExplorationViewpoint {
                    pose: Pose::new(p, atan2(d.y, d.x)),
                    visible,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no active frontier cluster to visit")]
pub struct NoTarget;

#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationPlan {
    pub target: ClusterId,
    pub pose: Pose,
    /// Full tour over active clusters; the first entry is `target`.
    pub order: Vec<ClusterId>,
    pub uses_sentinel: bool,
}

fn active_viewpoints<'a>(clusters: impl IntoIterator<Item = &'a FrontierCluster>) -> Vec<(ClusterId, Pose)> {
    clusters
        .into_iter()
        .filter_map(|c| c.viewpoint.map(|vp| (c.id, vp.pose)))
        .collect()
}

fn plan_from_matrix(active: &[(ClusterId, Pose)], m: &AtspMatrix, seed: u64) -> ExplorationPlan {
    let sol = solve_atsp(m, seed);
    let order: Vec<ClusterId> = sol.order.iter().map(|&k| active[k - 1].0).collect();
    let first = sol.order[0] - 1;
    ExplorationPlan {
        target: active[first].0,
        pose: active[first].1,
        order,
        uses_sentinel: sol.uses_sentinel,
    }
}

/// Orders the active clusters' viewpoints by an open ATSP tour from the
/// explorer pose.
pub fn plan_exploration_step<'a>(
    grid: &VoxelGrid,
    pose: Pose,
    clusters: impl IntoIterator<Item = &'a FrontierCluster>,
    limits: MoveLimits,
    seed: u64,
) -> Result<ExplorationPlan, NoTarget> {
    let active = active_viewpoints(clusters);
    if active.is_empty() {
        return Err(NoTarget);
    }
    let nodes: Vec<Pose> = active.iter().map(|a| a.1).collect();
    let m = build_atsp_matrix(grid, None, pose, &nodes, limits);
    Ok(plan_from_matrix(&active, &m, seed))
}

/// Viewpoint-to-viewpoint path lengths kept across planning steps while
/// both clusters survive with unchanged viewpoint positions. Only the row
/// from the explorer pose is searched afresh every step.
#[derive(Clone, Debug, Default)]
pub struct TourCostCache {
    at: BTreeMap<ClusterId, Vec3>,
    lens: BTreeMap<(ClusterId, ClusterId), Option<f64>>,
    sweeps: usize,
}

impl TourCostCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Searches run so far.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn cached_pairs(&self) -> usize {
        self.lens.len()
    }

    fn sync(&mut self, active: &[(ClusterId, Pose)]) {
        let live: BTreeMap<ClusterId, Vec3> = active.iter().map(|(c, p)| (*c, p.position)).collect();
        let stale: BTreeSet<ClusterId> = self
            .at
            .iter()
            .filter(|(c, p)| live.get(c) != Some(p))
            .map(|(c, _)| *c)
            .collect();
        if !stale.is_empty() {
            self.lens.retain(|(a, b), _| !stale.contains(a) && !stale.contains(b));
        }
        self.at = live;
    }

    fn fill(&mut self, grid: &VoxelGrid, graph: Option<&MoveGraph>, active: &[(ClusterId, Pose)]) {
        for (i, (a, pa)) in active.iter().enumerate() {
            let missing: Vec<usize> = (i + 1..active.len())
                .filter(|&j| !self.lens.contains_key(&(*a, active[j].0)))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let targets: Vec<Vec3> = missing.iter().map(|&j| active[j].1.position).collect();
            let row = sweep_lengths(grid, graph, pa.position, &targets);
            self.sweeps += 1;
            for (&j, l) in missing.iter().zip(row) {
                let b = active[j].0;
                self.lens.insert((*a, b), l);
                self.lens.insert((b, *a), l);
            }
        }
    }

    /// As [`plan_exploration_step`] with cached inter-viewpoint lengths.
    pub fn plan<'a>(
        &mut self,
        grid: &VoxelGrid,
        graph: Option<&MoveGraph>,
        pose: Pose,
        clusters: impl IntoIterator<Item = &'a FrontierCluster>,
        limits: MoveLimits,
        seed: u64,
    ) -> Result<ExplorationPlan, NoTarget> {
        let active = active_viewpoints(clusters);
        self.sync(&active);
        if active.is_empty() {
            return Err(NoTarget);
        }
        self.fill(grid, graph, &active);
        let positions: Vec<Vec3> = active.iter().map(|a| a.1.position).collect();
        let row0 = sweep_lengths(grid, graph, pose.position, &positions);
        self.sweeps += 1;
        let poses: Vec<Pose> = core::iter::once(pose).chain(active.iter().map(|a| a.1)).collect();
        let m = atsp_from_lengths(
            &poses,
            |i, j| match (i, j) {
                _ if i == j => Some(0.0),
                (0, j) => row0[j - 1],
                (i, 0) => row0[i - 1],
                (i, j) => self.lens[&(active[i - 1].0, active[j - 1].0)],
            },
            limits,
        );
        Ok(plan_from_matrix(&active, &m, seed))
    }
}

/// No cluster of any kind is left.
pub fn exploration_done(frontiers: &FrontierMap) -> bool {
    frontiers.is_empty()
}
