//! Shared voxel occupancy map.
//!
//! The grid stores a tri-state occupancy per voxel, a cached surface flag
//! (occupied with at least one free face neighbour), an "extracted" flag used
//! by the coverage pipeline, and a bounded reservoir of LiDAR hit points for
//! occupied voxels. Path search, ray traversal and the obstacle distance field
//! live here as well since every planner needs them.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{ceil, floor, sqrt, Aabb, Vec3};

/// Maximum number of hit points retained per occupied voxel.
pub const POINT_CAP: usize = 32;

/// Grids larger than this are rejected (dense per-voxel arrays).
pub const MAX_VOXELS: usize = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoxelState {
    Unknown,
    Free,
    Occupied,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelId(pub u32);

impl VoxelId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("bounds are degenerate")]
    DegenerateBounds,
    #[error("grid of {0} voxels exceeds the supported size")]
    GridTooLarge(usize),
    #[error("point {index} lies outside the grid bounds")]
    PointOutOfBounds { index: usize },
}

/// Path search found no traversable route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no traversable path between the requested points")]
pub struct Unreachable;

pub const NEIGHBORS6: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

const fn build_neighbors26() -> [[i64; 3]; 26] {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
}

pub const NEIGHBORS26: [[i64; 3]; 26] = build_neighbors26();

/// Geometry of a regular voxel grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(bounds: Aabb, resolution: f64) -> Result<Self, WorldError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(WorldError::InvalidResolution(resolution));
        }
        if bounds.is_degenerate() {
            return Err(WorldError::DegenerateBounds);
        }
        let s = bounds.size();
        let dim = |len: f64| (ceil(len / resolution - 1e-9) as usize).max(1);
        let dims = [dim(s.x), dim(s.y), dim(s.z)];
        let total = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .unwrap_or(usize::MAX);
        if total > MAX_VOXELS {
            return Err(WorldError::GridTooLarge(total));
        }
        Ok(GridSpec {
            origin: bounds.min,
            resolution,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> Aabb {
        let r = self.resolution;
        Aabb::new(
            self.origin,
            self.origin
                + Vec3::new(
                    self.dims[0] as f64 * r,
                    self.dims[1] as f64 * r,
                    self.dims[2] as f64 * r,
                ),
        )
    }

    #[inline]
    pub fn in_range(&self, c: [i64; 3]) -> bool {
        c[0] >= 0
            && c[1] >= 0
            && c[2] >= 0
            && (c[0] as usize) < self.dims[0]
            && (c[1] as usize) < self.dims[1]
            && (c[2] as usize) < self.dims[2]
    }

    #[inline]
    pub fn id(&self, c: [i64; 3]) -> Option<VoxelId> {
        if !self.in_range(c) {
            return None;
        }
        let idx = c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize);
        Some(VoxelId(idx as u32))
    }

    #[inline]
    pub fn coords(&self, id: VoxelId) -> [i64; 3] {
        let i = id.index();
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x as i64, y as i64, z as i64]
    }

    /// Continuous voxel coordinates of a point (no bounds check).
    fn cell_coord(&self, p: Vec3, axis: usize) -> i64 {
        let f = (p.get(axis) - self.origin.get(axis)) / self.resolution;
        let mut i = floor(f) as i64;
        let n = self.dims[axis] as i64;
        // points on the upper face belong to the last voxel
        if i == n && f <= n as f64 + 1e-9 {
            i = n - 1;
        }
        if i == -1 && f >= -1e-9 {
            i = 0;
        }
        i
    }

    pub fn coords_of(&self, p: Vec3) -> [i64; 3] {
        [
            self.cell_coord(p, 0),
            self.cell_coord(p, 1),
            self.cell_coord(p, 2),
        ]
    }

    pub fn voxel_of(&self, p: Vec3) -> Option<VoxelId> {
        if !p.is_finite() {
            return None;
        }
        self.id(self.coords_of(p))
    }

    pub fn center_of_coords(&self, c: [i64; 3]) -> Vec3 {
        let r = self.resolution;
        self.origin
            + Vec3::new(
                (c[0] as f64 + 0.5) * r,
                (c[1] as f64 + 0.5) * r,
                (c[2] as f64 + 0.5) * r,
            )
    }

    pub fn center(&self, id: VoxelId) -> Vec3 {
        self.center_of_coords(self.coords(id))
    }

    pub fn voxel_box(&self, id: VoxelId) -> Aabb {
        let c = self.coords(id);
        let r = self.resolution;
        let min = self.origin + Vec3::new(c[0] as f64 * r, c[1] as f64 * r, c[2] as f64 * r);
        Aabb::new(min, min + Vec3::new(r, r, r))
    }

    #[inline]
    pub fn offset(&self, id: VoxelId, o: [i64; 3]) -> Option<VoxelId> {
        let c = self.coords(id);
        self.id([c[0] + o[0], c[1] + o[1], c[2] + o[2]])
    }

    pub fn neighbors6(&self, id: VoxelId) -> impl Iterator<Item = VoxelId> + '_ {
        let c = self.coords(id);
        NEIGHBORS6
            .iter()
            .filter_map(move |o| self.id([c[0] + o[0], c[1] + o[1], c[2] + o[2]]))
    }

    pub fn neighbors26(&self, id: VoxelId) -> impl Iterator<Item = VoxelId> + '_ {
        let c = self.coords(id);
        NEIGHBORS26
            .iter()
            .filter_map(move |o| self.id([c[0] + o[0], c[1] + o[1], c[2] + o[2]]))
    }

    /// Ordered voxel walk from `a` to `b`, clipped to the grid.
    pub fn walk(&self, a: Vec3, b: Vec3) -> VoxelWalk<'_> {
        VoxelWalk::new(self, a, b)
    }

    /// Every voxel the closed segment touches, including voxels only grazed at
    /// an edge or corner.
    pub fn supercover(&self, a: Vec3, b: Vec3) -> Vec<VoxelId> {
        let mut out = Vec::new();
        let mut w = VoxelWalk::new(self, a, b);
        if w.done {
            return out;
        }
        let mut guard = self.dims[0] + self.dims[1] + self.dims[2] + 8;
        loop {
            if let Some(id) = self.id(w.cur) {
                out.push(id);
            }
            if w.cur == w.end || guard == 0 {
                break;
            }
            guard -= 1;
            let tmin = w.t_max[0].min(w.t_max[1]).min(w.t_max[2]);
            if !(tmin <= w.t_exit) {
                break;
            }
            let tol = 1e-9 * (1.0 + tmin.abs());
            let tied: Vec<usize> = (0..3).filter(|&k| w.t_max[k] - tmin <= tol).collect();
            if tied.len() > 1 {
                // visit the voxels sharing the crossed edge/corner
                let n = tied.len();
                for mask in 1..(1u32 << n) - 1 {
                    let mut c = w.cur;
                    for (bit, &axis) in tied.iter().enumerate() {
                        if mask & (1 << bit) != 0 {
                            c[axis] += w.step[axis];
                        }
                    }
                    if let Some(id) = self.id(c) {
                        out.push(id);
                    }
                }
            }
            for &axis in &tied {
                w.cur[axis] += w.step[axis];
                w.t_max[axis] += w.t_delta[axis];
            }
            if !self.in_range(w.cur) {
                break;
            }
        }
        out
    }
}

/// Amanatides–Woo traversal. Yields each voxel with the segment parameter
/// (0..=1) at which the segment enters it. Face-crossing ties step x, then y,
/// then z.
pub struct VoxelWalk<'a> {
    spec: &'a GridSpec,
    cur: [i64; 3],
    end: [i64; 3],
    step: [i64; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    t_enter: f64,
    t_exit: f64,
    remaining: usize,
    done: bool,
}

impl<'a> VoxelWalk<'a> {
    fn new(spec: &'a GridSpec, a: Vec3, b: Vec3) -> Self {
        let mut w = VoxelWalk {
            spec,
            cur: [0; 3],
            end: [0; 3],
            step: [0; 3],
            t_max: [f64::INFINITY; 3],
            t_delta: [f64::INFINITY; 3],
            t_enter: 0.0,
            t_exit: 0.0,
            remaining: spec.dims[0] + spec.dims[1] + spec.dims[2] + 8,
            done: true,
        };
        if !a.is_finite() || !b.is_finite() {
            return w;
        }
        let Some((t0, t1)) = spec.bounds().clip_segment(a, b) else {
            return w;
        };
        let d = b - a;
        let clamp = |c: [i64; 3]| {
            let mut c = c;
            for k in 0..3 {
                c[k] = c[k].clamp(0, spec.dims[k] as i64 - 1);
            }
            c
        };
        let start = a + d * t0;
        let stop = a + d * t1;
        w.cur = clamp(spec.coords_of(start));
        w.end = clamp(spec.coords_of(stop));
        w.t_enter = t0;
        w.t_exit = t1;
        let r = spec.resolution;
        for k in 0..3 {
            let dk = d.get(k);
            let ak = a.get(k);
            let ok = spec.origin.get(k);
            if dk > 0.0 {
                w.step[k] = 1;
                let boundary = ok + (w.cur[k] + 1) as f64 * r;
                w.t_max[k] = (boundary - ak) / dk;
                w.t_delta[k] = r / dk;
            } else if dk < 0.0 {
                w.step[k] = -1;
                let boundary = ok + w.cur[k] as f64 * r;
                w.t_max[k] = (boundary - ak) / dk;
                w.t_delta[k] = -r / dk;
            }
        }
        w.done = false;
        w
    }
}

impl Iterator for VoxelWalk<'_> {
    type Item = (VoxelId, f64);

    fn next(&mut self) -> Option<(VoxelId, f64)> {
        if self.done {
            return None;
        }
        let id = self.spec.id(self.cur)?;
        let out = (id, self.t_enter);
        if self.cur == self.end || self.remaining == 0 {
            self.done = true;
            return Some(out);
        }
        self.remaining -= 1;
        let axis = if self.t_max[0] <= self.t_max[1] && self.t_max[0] <= self.t_max[2] {
            0
        } else if self.t_max[1] <= self.t_max[2] {
            1
        } else {
            2
        };
        let t = self.t_max[axis];
        if !(t <= self.t_exit) {
            self.done = true;
            return Some(out);
        }
        self.t_enter = t;
        self.cur[axis] += self.step[axis];
        self.t_max[axis] += self.t_delta[axis];
        if !self.spec.in_range(self.cur) {
            self.done = true;
        }
        Some(out)
    }
}

#[derive(Clone, Debug, Default)]
struct PointBucket {
    points: Vec<Vec3>,
    offered: u64,
}

/// Deterministic 64-bit mixer used for reservoir replacement decisions.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Voxel occupancy map with surface flags, extraction flags and point store.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    spec: GridSpec,
    state: Vec<VoxelState>,
    surface: Vec<bool>,
    extracted: Vec<bool>,
    points: BTreeMap<VoxelId, PointBucket>,
    extraction_events: u64,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec, fill: VoxelState) -> Self {
        let n = spec.len();
        VoxelGrid {
            spec,
            state: vec![fill; n],
            surface: vec![false; n],
            extracted: vec![false; n],
            points: BTreeMap::new(),
            extraction_events: 0,
        }
    }

    /// All-unknown planning grid with the same geometry as `other`.
    pub fn unknown_like(other: &VoxelGrid) -> Self {
        VoxelGrid::new(other.spec.clone(), VoxelState::Unknown)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    #[inline]
    pub fn state(&self, id: VoxelId) -> VoxelState {
        self.state[id.index()]
    }

    /// State at a point; out-of-bounds points report `None`.
    pub fn state_at(&self, p: Vec3) -> Option<VoxelState> {
        self.spec.voxel_of(p).map(|v| self.state(v))
    }

    #[inline]
    pub fn is_free(&self, id: VoxelId) -> bool {
        self.state[id.index()] == VoxelState::Free
    }

    #[inline]
    pub fn is_surface(&self, id: VoxelId) -> bool {
        self.surface[id.index()]
    }

    #[inline]
    pub fn is_extracted(&self, id: VoxelId) -> bool {
        self.extracted[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = VoxelId> {
        (0..self.state.len() as u32).map(VoxelId)
    }

    pub fn count(&self, s: VoxelState) -> usize {
        self.state.iter().filter(|&&x| x == s).count()
    }

    pub fn surface_voxels(&self) -> impl Iterator<Item = VoxelId> + '_ {
        self.surface
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| VoxelId(i as u32))
    }

    /// Surface predicate evaluated from current states.
    pub fn surface_predicate(&self, id: VoxelId) -> bool {
        self.state(id) == VoxelState::Occupied && self.spec.neighbors6(id).any(|n| self.is_free(n))
    }

    /// Sets a voxel state and refreshes surface flags around it.
    ///
    /// The sticky-occupancy rule applies to scan integration only; this is the
    /// raw setter used for scene construction.
    pub fn set_state(&mut self, id: VoxelId, s: VoxelState) {
        self.state[id.index()] = s;
        if s != VoxelState::Occupied {
            self.points.remove(&id);
        }
        self.refresh_surface(id);
        let nbrs: Vec<VoxelId> = self.spec.neighbors6(id).collect();
        for n in nbrs {
            self.refresh_surface(n);
        }
    }

    fn refresh_surface(&mut self, id: VoxelId) -> bool {
        let s = self.surface_predicate(id);
        let changed = self.surface[id.index()] != s;
        self.surface[id.index()] = s;
        changed
    }

    /// Re-evaluates the surface predicate for `candidates`, updating the
    /// cached flags, and returns those that are surface voxels.
    pub fn classify_surface<I>(&mut self, candidates: I) -> BTreeSet<VoxelId>
    where
        I: IntoIterator<Item = VoxelId>,
    {
        let mut out = BTreeSet::new();
        for id in candidates {
            self.refresh_surface(id);
            if self.surface[id.index()] {
                out.insert(id);
            }
        }
        out
    }

    pub fn points(&self, id: VoxelId) -> &[Vec3] {
        self.points.get(&id).map(|b| b.points.as_slice()).unwrap_or(&[])
    }

    pub fn total_points(&self) -> usize {
        self.points.values().map(|b| b.points.len()).sum()
    }

    /// Offers a point to a voxel's reservoir. Exact duplicates are ignored;
    /// extracted voxels are frozen. Returns whether the stored set changed.
    pub fn insert_point(&mut self, id: VoxelId, p: Vec3) -> bool {
        if self.state(id) != VoxelState::Occupied || self.extracted[id.index()] {
            return false;
        }
        let vb = self.spec.voxel_box(id);
        let eps = self.spec.resolution * 1e-9;
        let p = Vec3::new(
            p.x.clamp(vb.min.x + eps, vb.max.x - eps),
            p.y.clamp(vb.min.y + eps, vb.max.y - eps),
            p.z.clamp(vb.min.z + eps, vb.max.z - eps),
        );
        let bucket = self.points.entry(id).or_default();
        if bucket.points.contains(&p) {
            return false;
        }
        bucket.offered += 1;
        if bucket.points.len() < POINT_CAP {
            bucket.points.push(p);
            return true;
        }
        let j = splitmix64(((id.0 as u64) << 32) ^ bucket.offered) % bucket.offered;
        if (j as usize) < POINT_CAP {
            bucket.points[j as usize] = p;
            return true;
        }
        false
    }

    /// Flags a voxel as extracted. Returns `false` if it already was.
    pub fn mark_extracted(&mut self, id: VoxelId) -> bool {
        if self.extracted[id.index()] {
            return false;
        }
        self.extracted[id.index()] = true;
        self.extraction_events += 1;
        true
    }

    /// Number of successful `mark_extracted` calls over the grid's lifetime.
    pub fn extraction_events(&self) -> u64 {
        self.extraction_events
    }

    /// Applies one sensor sweep. Voxels crossed before a hit (and along miss
    /// rays) become free unless already occupied; hit voxels become occupied
    /// and receive the hit point. Returns every voxel whose state or surface
    /// flag changed.
    pub fn integrate_scan(&mut self, origin: Vec3, hits: &[Vec3], misses: &[Vec3]) -> BTreeSet<VoxelId> {
        let mut state_changed: Vec<VoxelId> = Vec::new();
        let spec = self.spec.clone();
        for &h in hits {
            let hv = spec.voxel_of(h);
            for (v, _) in spec.walk(origin, h) {
                if Some(v) == hv {
                    break;
                }
                if self.state[v.index()] == VoxelState::Unknown {
                    self.state[v.index()] = VoxelState::Free;
                    state_changed.push(v);
                }
            }
            if let Some(hv) = hv {
                if self.state[hv.index()] != VoxelState::Occupied {
                    self.state[hv.index()] = VoxelState::Occupied;
                    state_changed.push(hv);
                }
                self.insert_point(hv, h);
            }
        }
        for &m in misses {
            for (v, _) in spec.walk(origin, m) {
                if self.state[v.index()] == VoxelState::Unknown {
                    self.state[v.index()] = VoxelState::Free;
                    state_changed.push(v);
                }
            }
        }
        let mut changed: BTreeSet<VoxelId> = state_changed.iter().copied().collect();
        let mut touched: BTreeSet<VoxelId> = BTreeSet::new();
        for &v in &state_changed {
            touched.insert(v);
            touched.extend(spec.neighbors6(v));
        }
        for v in touched {
            if self.refresh_surface(v) {
                changed.insert(v);
            }
        }
        changed
    }

    /// Ray visibility query against the current map.
    pub fn raycast(&self, origin: Vec3, target: Vec3) -> RayHit {
        let Some(tv) = self.spec.voxel_of(target) else {
            return self.raycast_open(origin, target);
        };
        let ov = self.spec.voxel_of(origin);
        if ov == Some(tv) {
            return if self.state(tv) == VoxelState::Occupied {
                RayHit::ReachedOccupied(tv)
            } else {
                RayHit::Clear
            };
        }
        for (v, _) in self.spec.walk(origin, target) {
            if Some(v) == ov {
                continue;
            }
            if v == tv {
                return if self.state(v) == VoxelState::Occupied {
                    RayHit::ReachedOccupied(v)
                } else {
                    RayHit::Clear
                };
            }
            match self.state(v) {
                VoxelState::Free => {}
                _ => return RayHit::Blocked(v),
            }
        }
        RayHit::Clear
    }

    fn raycast_open(&self, origin: Vec3, target: Vec3) -> RayHit {
        let ov = self.spec.voxel_of(origin);
        for (v, _) in self.spec.walk(origin, target) {
            if Some(v) == ov {
                continue;
            }
            if self.state(v) != VoxelState::Free {
                return RayHit::Blocked(v);
            }
        }
        RayHit::Clear
    }
}

/// Voxelizes a point set into a ground-truth grid: voxels containing a point
/// are occupied, everything else is free.
pub fn voxelize_scene(points: &[Vec3], resolution: f64, bounds: Aabb) -> Result<VoxelGrid, WorldError> {
    let spec = GridSpec::new(bounds, resolution)?;
    let mut grid = VoxelGrid::new(spec, VoxelState::Free);
    for (index, p) in points.iter().enumerate() {
        if !bounds.contains(*p) {
            return Err(WorldError::PointOutOfBounds { index });
        }
        let v = grid
            .spec
            .voxel_of(*p)
            .ok_or(WorldError::PointOutOfBounds { index })?;
        grid.state[v.index()] = VoxelState::Occupied;
    }
    let ids: Vec<VoxelId> = grid.ids().collect();
    for v in ids {
        grid.refresh_surface(v);
    }
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayHit {
    /// Nothing opaque between origin and target.
    Clear,
    /// An occupied or unknown voxel before the target voxel.
    Blocked(VoxelId),
    /// The first opaque voxel is the (occupied) target voxel itself.
    ReachedOccupied(VoxelId),
}

/// Euclidean distance from every voxel centre to the nearest occupied voxel
/// centre, capped at `max`.
#[derive(Clone, Debug)]
pub struct DistanceField {
    spec: GridSpec,
    dist: Vec<f64>,
    max: f64,
}

impl DistanceField {
    pub fn max_distance(&self) -> f64 {
        self.max
    }

    #[inline]
    pub fn at_voxel(&self, id: VoxelId) -> f64 {
        self.dist[id.index()]
    }

    /// Distance at the voxel containing `p`; zero outside the grid.
    pub fn at(&self, p: Vec3) -> f64 {
        self.spec.voxel_of(p).map(|v| self.at_voxel(v)).unwrap_or(0.0)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
}

const EDT_INF: f64 = 1e20;

/// 1D squared distance transform of sampled function `f` (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let parabola = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Exact Euclidean distance transform over voxel centres (separable, linear
/// time). Occupied voxels are the sources.
pub fn distance_field(grid: &VoxelGrid, max: f64) -> DistanceField {
    distance_field_by(grid, max, |s| s == VoxelState::Occupied)
}

/// As [`distance_field`] with every non-free voxel (occupied or unknown) as a
/// source: the clearance that cannot shrink as the map fills in.
pub fn known_free_distance_field(grid: &VoxelGrid, max: f64) -> DistanceField {
    distance_field_by(grid, max, |s| s != VoxelState::Free)
}

fn distance_field_by(grid: &VoxelGrid, max: f64, source: impl Fn(VoxelState) -> bool) -> DistanceField {
    let spec = grid.spec.clone();
    let [nx, ny, nz] = spec.dims;
    let mut g: Vec<f64> = grid
        .state
        .iter()
        .map(|&s| if source(s) { 0.0 } else { EDT_INF })
        .collect();
    let has_source = g.contains(&0.0);
    if !has_source {
        return DistanceField {
            dist: vec![max; spec.len()],
            spec,
            max,
        };
    }
    let nmax = nx.max(ny).max(nz);
    let mut f = vec![0.0; nmax];
    let mut d = vec![0.0; nmax];
    let mut v = vec![0usize; nmax];
    let mut z = vec![0.0; nmax + 1];
    let idx = |x: usize, y: usize, zz: usize| x + nx * (y + ny * zz);
    // x pass
    for zz in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                f[x] = g[idx(x, y, zz)];
            }
            edt_1d(&f[..nx], &mut d[..nx], &mut v, &mut z);
            for x in 0..nx {
                g[idx(x, y, zz)] = d[x].min(EDT_INF);
            }
        }
    }
    // y pass
    for zz in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                f[y] = g[idx(x, y, zz)];
            }
            edt_1d(&f[..ny], &mut d[..ny], &mut v, &mut z);
            for y in 0..ny {
                g[idx(x, y, zz)] = d[y].min(EDT_INF);
            }
        }
    }
    // z pass
    for y in 0..ny {
        for x in 0..nx {
            for zz in 0..nz {
                f[zz] = g[idx(x, y, zz)];
            }
            edt_1d(&f[..nz], &mut d[..nz], &mut v, &mut z);
            for zz in 0..nz {
                g[idx(x, y, zz)] = d[zz].min(EDT_INF);
            }
        }
    }
    let r = spec.resolution;
    let dist = g
        .into_iter()
        .map(|sq| if sq >= EDT_INF * 0.5 { max } else { (sqrt(sq) * r).min(max) })
        .collect();
    DistanceField { spec, dist, max }
}

/// Minimum-clearance requirement for vehicle paths.
#[derive(Clone, Copy, Debug)]
pub struct Clearance<'a> {
    pub field: &'a DistanceField,
    pub min_distance: f64,
}

/// Result of a grid path search. `length` is measured along voxel centres;
/// `points` starts at the query start, passes through the interior voxel
/// centres and ends at the query goal.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath {
    pub voxels: Vec<VoxelId>,
    pub points: Vec<Vec3>,
    pub length: f64,
}

impl GridPath {
    /// Query start, every voxel centre, then the query goal (consecutive
    /// duplicates removed).
    pub fn full_polyline(&self, spec: &GridSpec) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.voxels.len() + 2);
        let push = |p: Vec3, out: &mut Vec<Vec3>| {
            if out.last() != Some(&p) {
                out.push(p);
            }
        };
        if let Some(first) = self.points.first() {
            push(*first, &mut out);
        }
        for v in &self.voxels {
            push(spec.center(*v), &mut out);
        }
        if let Some(last) = self.points.last() {
            push(*last, &mut out);
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
struct OpenNode {
    f: f64,
    g: f64,
    id: u32,
}

impl Eq for OpenNode {}

impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: smallest f first, then deepest g, then id
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Corner-cutting rule shared by every grid search: a move by `d` is legal
/// iff every voxel `c + d∘m` for non-zero masks `m` is traversable.
pub(crate) fn move_voxels(spec: &GridSpec, c: [i64; 3], d: [i64; 3], out: &mut Vec<VoxelId>) -> bool {
    out.clear();
    for mask in 1u8..8 {
        let mut skip = false;
        let mut n = c;
        for k in 0..3 {
            if mask & (1 << k) != 0 {
                if d[k] == 0 {
                    skip = true;
                    break;
                }
                n[k] += d[k];
            }
        }
        if skip {
            continue;
        }
        match spec.id(n) {
            Some(id) => out.push(id),
            None => return false,
        }
    }
    true
}

fn step_len(d: [i64; 3], r: f64) -> f64 {
    let k = d[0].abs() + d[1].abs() + d[2].abs();
    match k {
        1 => r,
        2 => r * core::f64::consts::SQRT_2,
        _ => r * sqrt(3.0),
    }
}

struct Traversal<'a> {
    grid: &'a VoxelGrid,
    clearance: Option<Clearance<'a>>,
}

impl Traversal<'_> {
    #[inline]
    fn ok(&self, v: VoxelId) -> bool {
        self.grid.is_free(v)
            && self
                .clearance
                .map(|c| c.field.at_voxel(v) >= c.min_distance)
                .unwrap_or(true)
    }
}

/// A* over free voxels with 26-connectivity, Euclidean edge weights and a
/// Euclidean heuristic. With `clearance`, every voxel after the start must
/// also keep the required obstacle distance.
pub fn astar_path(
    grid: &VoxelGrid,
    a: Vec3,
    b: Vec3,
    clearance: Option<Clearance<'_>>,
) -> Result<GridPath, Unreachable> {
    let spec = grid.spec();
    let (Some(sv), Some(gv)) = (spec.voxel_of(a), spec.voxel_of(b)) else {
        return Err(Unreachable);
    };
    let trav = Traversal { grid, clearance };
    if !grid.is_free(sv) || !trav.ok(gv) {
        return Err(Unreachable);
    }
    if sv == gv {
        let points = if a == b { vec![a] } else { vec![a, b] };
        return Ok(GridPath {
            voxels: vec![sv],
            points,
            length: 0.0,
        });
    }
    let n = grid.len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let goal_c = spec.center(gv);
    let h = |v: VoxelId| spec.center(v).dist(goal_c);
    g[sv.index()] = 0.0;
    heap.push(OpenNode {
        f: h(sv),
        g: 0.0,
        id: sv.0,
    });
    let r = spec.resolution;
    let mut scratch = Vec::with_capacity(7);
    while let Some(node) = heap.pop() {
        let u = VoxelId(node.id);
        if closed[u.index()] {
            continue;
        }
        closed[u.index()] = true;
        if u == gv {
            break;
        }
        let c = spec.coords(u);
        for d in NEIGHBORS26.iter() {
            if !move_voxels(spec, c, *d, &mut scratch) {
                continue;
            }
            if !scratch.iter().all(|&v| trav.ok(v)) {
                continue;
            }
            let nb = *scratch.last().expect("full move voxel is last");
            if closed[nb.index()] {
                continue;
            }
            let ng = node.g + step_len(*d, r);
            if ng < g[nb.index()] {
                g[nb.index()] = ng;
                parent[nb.index()] = u.0;
                heap.push(OpenNode {
                    f: ng + h(nb),
                    g: ng,
                    id: nb.0,
                });
            }
        }
    }
    if !closed[gv.index()] {
        return Err(Unreachable);
    }
    let mut voxels = vec![gv];
    let mut cur = gv;
    while cur != sv {
        cur = VoxelId(parent[cur.index()]);
        voxels.push(cur);
    }
    voxels.reverse();
    let mut points = Vec::with_capacity(voxels.len());
    points.push(a);
    for v in &voxels[1..voxels.len() - 1] {
        points.push(spec.center(*v));
    }
    points.push(b);
    Ok(GridPath {
        voxels,
        points,
        length: g[gv.index()],
    })
}

/// Single-source shortest free-voxel path lengths (voxel-centre metric) to a
/// set of targets. Same graph as [`astar_path`] without clearance, so the
/// lengths agree with it. Unreachable targets map to `None`.
pub fn path_lengths_from(grid: &VoxelGrid, source: Vec3, targets: &[Vec3]) -> Vec<Option<f64>> {
    let spec = grid.spec();
    let mut out = vec![None; targets.len()];
    let Some(sv) = spec.voxel_of(source) else {
        return out;
    };
    if !grid.is_free(sv) {
        return out;
    }
    let target_voxels: Vec<Option<VoxelId>> = targets
        .iter()
        .map(|t| spec.voxel_of(*t).filter(|v| grid.is_free(*v)))
        .collect();
    let mut pending: BTreeMap<VoxelId, Vec<usize>> = BTreeMap::new();
    for (i, tv) in target_voxels.iter().enumerate() {
        if let Some(v) = tv {
            pending.entry(*v).or_default().push(i);
        }
    }
    if pending.is_empty() {
        return out;
    }
    let n = grid.len();
    let mut g = vec![f64::INFINITY; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    g[sv.index()] = 0.0;
    heap.push(OpenNode {
        f: 0.0,
        g: 0.0,
        id: sv.0,
    });
    let r = spec.resolution;
    let trav = Traversal {
        grid,
        clearance: None,
    };
    let mut scratch = Vec::with_capacity(7);
    while let Some(node) = heap.pop() {
        let u = VoxelId(node.id);
        if closed[u.index()] {
            continue;
        }
        closed[u.index()] = true;
        if let Some(idxs) = pending.remove(&u) {
            for i in idxs {
                out[i] = Some(node.g);
            }
            if pending.is_empty() {
                break;
            }
        }
        let c = spec.coords(u);
        for d in NEIGHBORS26.iter() {
            if !move_voxels(spec, c, *d, &mut scratch) || !scratch.iter().all(|&v| trav.ok(v)) {
                continue;
            }
            let nb = *scratch.last().expect("full move voxel is last");
            let ng = node.g + step_len(*d, r);
            if ng < g[nb.index()] {
                g[nb.index()] = ng;
                heap.push(OpenNode {
                    f: ng,
                    g: ng,
                    id: nb.0,
                });
            }
        }
    }
    out
}

/// [`path_lengths_from`], through `graph` when one is at hand.
pub fn sweep_lengths(grid: &VoxelGrid, graph: Option<&MoveGraph>, source: Vec3, targets: &[Vec3]) -> Vec<Option<f64>> {
    match graph {
        Some(g) => g.lengths_from(grid, source, targets),
        None => path_lengths_from(grid, source, targets),
    }
}

/// Legal 26-neighbour moves of every free voxel, precomputed once so that
/// repeated sweeps over the same map skip the corner-cutting checks.
/// Lengths agree bit for bit with [`path_lengths_from`].
#[derive(Clone, Debug)]
pub struct MoveGraph {
    masks: Vec<u32>,
    offsets: [i64; 26],
    weights: [f64; 26],
}

impl MoveGraph {
    pub fn new(grid: &VoxelGrid) -> Self {
        let spec = grid.spec();
        let mut scratch = Vec::with_capacity(7);
        let masks = grid.ids().map(|v| moves_of(grid, v, &mut scratch)).collect();
        let (nx, ny) = (spec.dims[0] as i64, spec.dims[1] as i64);
        let mut offsets = [0i64; 26];
        let mut weights = [0.0; 26];
        for (k, d) in NEIGHBORS26.iter().enumerate() {
            offsets[k] = d[0] + nx * (d[1] + ny * d[2]);
            weights[k] = step_len(*d, spec.resolution);
        }
        MoveGraph {
            masks,
            offsets,
            weights,
        }
    }

    /// Recomputes the moves around voxels whose state changed.
    pub fn update(&mut self, grid: &VoxelGrid, changed: impl IntoIterator<Item = VoxelId>) {
        let spec = grid.spec();
        let mut touched = BTreeSet::new();
        for w in changed {
            let c = spec.coords(w);
            touched.insert(w);
            for d in NEIGHBORS26.iter() {
                if let Some(v) = spec.id([c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                    touched.insert(v);
                }
            }
        }
        let mut scratch = Vec::with_capacity(7);
        for v in touched {
            self.masks[v.index()] = moves_of(grid, v, &mut scratch);
        }
    }

    /// As [`path_lengths_from`] on the grid this graph mirrors.
    pub fn lengths_from(&self, grid: &VoxelGrid, source: Vec3, targets: &[Vec3]) -> Vec<Option<f64>> {
        let spec = grid.spec();
        let mut out = vec![None; targets.len()];
        let Some(sv) = spec.voxel_of(source).filter(|v| grid.is_free(*v)) else {
            return out;
        };
        // slot + 1 into `groups`, 0 when the voxel is no target
        let mut slot = BTreeMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, t) in targets.iter().enumerate() {
            if let Some(v) = spec.voxel_of(*t).filter(|v| grid.is_free(*v)) {
                let k = *slot.entry(v).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[k].push(i);
            }
        }
        let mut remaining = groups.len();
        if remaining == 0 {
            return out;
        }
        let n = self.masks.len();
        let mut target = vec![0u32; n];
        for (v, k) in &slot {
            target[v.index()] = *k as u32 + 1;
        }
        let mut g = vec![f64::INFINITY; n];
        // non-negative f64 bit patterns order like the values
        let mut heap = RadixHeap::new();
        g[sv.index()] = 0.0;
        heap.push(0.0f64.to_bits(), sv.0);
        while let Some((key, id)) = heap.pop() {
            let u = id as usize;
            let gu = f64::from_bits(key);
            if gu > g[u] {
                continue;
            }
            if target[u] != 0 {
                for &i in &groups[target[u] as usize - 1] {
                    out[i] = Some(gu);
                }
                target[u] = 0;
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            let mut m = self.masks[u];
            while m != 0 {
                let k = m.trailing_zeros() as usize;
                m &= m - 1;
                let nb = (u as i64 + self.offsets[k]) as usize;
                let ng = gu + self.weights[k];
                if ng < g[nb] {
                    g[nb] = ng;
                    heap.push(ng.to_bits(), nb as u32);
                }
            }
        }
        out
    }
}

/// Monotone min-queue on `u64` keys: every push is at least the last key
/// popped, as in Dijkstra with non-negative weights.
struct RadixHeap {
    last: u64,
    len: usize,
    buckets: Vec<Vec<(u64, u32)>>,
}

impl RadixHeap {
    fn new() -> Self {
        RadixHeap {
            last: 0,
            len: 0,
            buckets: (0..65).map(|_| Vec::new()).collect(),
        }
    }

    #[inline]
    fn bucket(last: u64, k: u64) -> usize {
        64 - (k ^ last).leading_zeros() as usize
    }

    #[inline]
    fn push(&mut self, k: u64, v: u32) {
        debug_assert!(k >= self.last);
        self.buckets[Self::bucket(self.last, k)].push((k, v));
        self.len += 1;
    }

    fn pop(&mut self) -> Option<(u64, u32)> {
        if self.len == 0 {
            return None;
        }
        if self.buckets[0].is_empty() {
            let i = self.buckets.iter().position(|b| !b.is_empty())?;
            let moved = core::mem::take(&mut self.buckets[i]);
            self.last = moved.iter().map(|e| e.0).min()?;
            for e in &moved {
                self.buckets[Self::bucket(self.last, e.0)].push(*e);
            }
            // keep the allocation
            let mut moved = moved;
            moved.clear();
            self.buckets[i] = moved;
        }
        self.len -= 1;
        self.buckets[0].pop()
    }
}

fn moves_of(grid: &VoxelGrid, v: VoxelId, scratch: &mut Vec<VoxelId>) -> u32 {
    if !grid.is_free(v) {
        return 0;
    }
    let spec = grid.spec();
    let c = spec.coords(v);
    let mut m = 0u32;
    for (k, d) in NEIGHBORS26.iter().enumerate() {
        if move_voxels(spec, c, *d, scratch) && scratch.iter().all(|&u| grid.is_free(u)) {
            m |= 1 << k;
        }
    }
    m
}

/// True when every voxel touched by the segment is free and keeps the
/// requested clearance.
pub fn segment_clear(grid: &VoxelGrid, clearance: Clearance<'_>, a: Vec3, b: Vec3) -> bool {
    let spec = grid.spec();
    let bounds = spec.bounds();
    if !bounds.contains(a) || !bounds.contains(b) {
        return false;
    }
    spec.supercover(a, b)
        .into_iter()
        .all(|v| grid.is_free(v) && clearance.field.at_voxel(v) >= clearance.min_distance)
}
