//! Local viewpoint ordering, trajectory generation and execution for the
//! camera vehicles.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{VctId, VctStore};
use crate::coverage::ViewpointId;
use crate::geom::{angle_dist, sqrt, wrap_angle, CameraPose, Pose, Vec3};
use crate::routes::{build_atsp_matrix, solve_atsp_with_end, AtspMatrix, MoveLimits, UNREACHABLE_COST};
use crate::world::{astar_path, path_lengths_from, segment_clear, Clearance, DistanceField, VoxelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotographerParams {
    pub k_local: usize,
    pub m_kc: usize,
    /// r_s, metres
    pub safety_radius: f64,
    pub eps_pos: f64,
    pub eps_ang: f64,
    /// Unreachable attempts before a viewpoint is given up.
    pub max_failures: u32,
}

impl Default for PhotographerParams {
    fn default() -> Self {
        PhotographerParams {
            k_local: 2,
            m_kc: 3,
            safety_radius: 0.8,
            eps_pos: 0.3,
            eps_ang: 0.15,
            max_failures: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicLimits {
    pub v_max: f64,
    pub a_max: f64,
    /// Carried for completeness; a trapezoidal profile has unbounded jerk at
    /// its phase switches.
    pub j_max: f64,
    /// Yaw and gimbal pitch rate, rad/s.
    pub omega_max: f64,
}

impl DynamicLimits {
    pub fn photographer() -> Self {
        DynamicLimits {
            v_max: 1.0,
            a_max: 1.0,
            j_max: 1.0,
            omega_max: 1.0,
        }
    }

    pub fn explorer() -> Self {
        DynamicLimits {
            v_max: 2.0,
            a_max: 2.0,
            j_max: 2.0,
            omega_max: 2.0,
        }
    }

    pub fn move_limits(&self) -> MoveLimits {
        MoveLimits {
            v_max: self.v_max,
            yaw_rate_max: self.omega_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no assigned work")]
pub struct Idle;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalPlan {
    pub viewpoints: Vec<ViewpointId>,
    /// Centre of the task following the local window.
    pub endpoint: Option<Vec3>,
}

/// Orders the viewpoints of the first `k_local` tasks of `global` by an open
/// ATSP from `start`, pinning the next task's centre as the final node when
/// one exists. `poses` resolves viewpoint ids; unknown ids are skipped.
pub fn plan_local_path(
    start: CameraPose,
    global: &[VctId],
    store: &VctStore,
    poses: impl Fn(ViewpointId) -> Option<CameraPose>,
    grid: &VoxelGrid,
    lim: MoveLimits,
    k_local: usize,
    seed: u64,
) -> Result<LocalPlan, Idle> {
    let tasks: Vec<_> = global.iter().filter_map(|id| store.get(*id)).collect();
    if tasks.is_empty() {
        return Err(Idle);
    }
    let k = k_local.max(1).min(tasks.len());
    let mut ids = Vec::new();
    let mut nodes = Vec::new();
    for t in &tasks[..k] {
        for m in &t.members {
            if let Some(p) = poses(m.vp) {
                ids.push(m.vp);
                nodes.push(p.pose());
            }
        }
    }
    if ids.is_empty() {
        return Err(Idle);
    }
    let endpoint = tasks.get(k).map(|t| store.anchor(t.id, grid));
    let order = order_with_endpoint(grid, start.pose(), &nodes, endpoint, lim, seed);
    Ok(LocalPlan {
        viewpoints: order.into_iter().map(|i| ids[i]).collect(),
        endpoint,
    })
}

/// Indices into `nodes` in visiting order.
pub fn order_with_endpoint(
    grid: &VoxelGrid,
    start: Pose,
    nodes: &[Pose],
    endpoint: Option<Vec3>,
    lim: MoveLimits,
    seed: u64,
) -> Vec<usize> {
    let n = nodes.len();
    let base = build_atsp_matrix(grid, None, start, nodes, lim);
    let sol = match endpoint {
        None => solve_atsp_with_end(&base, seed, None),
        Some(e) => {
            let mut from: Vec<Vec3> = Vec::with_capacity(n + 1);
            from.push(start.position);
            from.extend(nodes.iter().map(|p| p.position));
            let lens = path_lengths_from(grid, e, &from);
            let m = AtspMatrix::from_fn(n + 2, |i, j| {
                if j == n + 1 {
                    lens[i].map_or(UNREACHABLE_COST, |l| l / lim.v_max)
                } else if i == n + 1 {
                    UNREACHABLE_COST
                } else {
                    base.get(i, j)
                }
            });
            solve_atsp_with_end(&m, seed, Some(n + 1))
        }
    };
    sol.order.into_iter().filter(|&k| k <= n).map(|k| k - 1).collect()
}

/// Rest-to-rest trapezoidal (or triangular) speed profile over a distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trapezoid {
    pub length: f64,
    pub v_peak: f64,
    pub accel: f64,
    pub t_acc: f64,
    pub t_cruise: f64,
}

impl Trapezoid {
    pub fn new(length: f64, v_max: f64, a_max: f64) -> Self {
        if length <= 0.0 {
            return Trapezoid {
                length: 0.0,
                v_peak: 0.0,
                accel: a_max,
                t_acc: 0.0,
                t_cruise: 0.0,
            };
        }
        if length >= v_max * v_max / a_max {
            Trapezoid {
                length,
                v_peak: v_max,
                accel: a_max,
                t_acc: v_max / a_max,
                t_cruise: (length - v_max * v_max / a_max) / v_max,
            }
        } else {
            let t = sqrt(length / a_max);
            Trapezoid {
                length,
                v_peak: a_max * t,
                accel: a_max,
                t_acc: t,
                t_cruise: 0.0,
            }
        }
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.t_acc + self.t_cruise
    }

    /// (distance, speed, signed acceleration) at time `t`, clamped.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let t = t.clamp(0.0, self.duration());
        let a = self.accel;
        if t < self.t_acc {
            (0.5 * a * t * t, a * t, a)
        } else if t <= self.t_acc + self.t_cruise {
            let d0 = 0.5 * a * self.t_acc * self.t_acc;
            (d0 + self.v_peak * (t - self.t_acc), self.v_peak, 0.0)
        } else {
            let r = self.duration() - t;
            if r <= 0.0 {
                return (self.length, 0.0, 0.0);
            }
            (self.length - 0.5 * a * r * r, a * r, -a)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub from: Vec3,
    pub to: Vec3,
    /// start time relative to the piece
    pub t0: f64,
    pub profile: Trapezoid,
}

/// Motion from one rest pose to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub target: Option<ViewpointId>,
    pub start: CameraPose,
    pub end: CameraPose,
    pub t0: f64,
    pub duration: f64,
    pub segments: Vec<Segment>,
}

impl Piece {
    fn translate_time(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t0 + s.profile.duration())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajSample {
    pub pose: CameraPose,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub pieces: Vec<Piece>,
}

impl Trajectory {
    pub fn hold(pose: CameraPose) -> Self {
        Trajectory {
            pieces: alloc::vec![Piece {
                target: None,
                start: pose,
                end: pose,
                t0: 0.0,
                duration: 0.0,
                segments: Vec::new(),
            }],
        }
    }

    pub fn duration(&self) -> f64 {
        self.pieces.last().map_or(0.0, |p| p.t0 + p.duration)
    }

    /// End time of every piece.
    pub fn piece_ends(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.t0 + p.duration).collect()
    }

    pub fn polyline_length(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|p| p.segments.iter())
            .map(|s| s.profile.length)
            .sum()
    }

    /// Arc length travelled by time `t`.
    pub fn distance_at(&self, t: f64) -> f64 {
        let mut d = 0.0;
        for p in &self.pieces {
            for s in &p.segments {
                let ts = p.t0 + s.t0;
                if t >= ts + s.profile.duration() {
                    d += s.profile.length;
                } else if t > ts {
                    d += s.profile.eval(t - ts).0;
                }
            }
        }
        d
    }

    pub fn targets(&self) -> Vec<ViewpointId> {
        self.pieces.iter().filter_map(|p| p.target).collect()
    }

    /// State at time `t`, clamped to the trajectory's span.
    pub fn sample(&self, t: f64) -> TrajSample {
        let t = t.clamp(0.0, self.duration());
        let k = self
            .pieces
            .iter()
            .position(|p| t <= p.t0 + p.duration)
            .unwrap_or(self.pieces.len() - 1);
        let p = &self.pieces[k];
        let tl = t - p.t0;
        let frac = if p.duration > 0.0 { (tl / p.duration).clamp(0.0, 1.0) } else { 1.0 };
        let yaw = wrap_angle(p.start.yaw + wrap_angle(p.end.yaw - p.start.yaw) * frac);
        let pitch = p.start.pitch + (p.end.pitch - p.start.pitch) * frac;
        let mut pos = p.end.position;
        let mut vel = Vec3::ZERO;
        let mut acc = Vec3::ZERO;
        if tl < p.translate_time() {
            if let Some(s) = p
                .segments
                .iter()
                .find(|s| tl <= s.t0 + s.profile.duration())
            {
                let dir = (s.to - s.from).normalized().unwrap_or(Vec3::ZERO);
                let (d, v, a) = s.profile.eval(tl - s.t0);
                pos = s.from + dir * d;
                vel = dir * v;
                acc = dir * a;
            }
        }
        TrajSample {
            pose: CameraPose::new(pos, pitch, yaw),
            velocity: vel,
            acceleration: acc,
        }
    }
}

/// Greedy node skipping: from each kept vertex, jump to the farthest later
/// vertex reachable by a clear straight segment.
pub fn shortcut(grid: &VoxelGrid, clearance: Clearance<'_>, poly: &[Vec3]) -> Vec<Vec3> {
    if poly.len() <= 2 {
        return poly.to_vec();
    }
    let mut out = alloc::vec![poly[0]];
    let mut i = 0;
    while i < poly.len() - 1 {
        let mut j = poly.len() - 1;
        while j > i + 1 && !segment_clear(grid, clearance, poly[i], poly[j]) {
            j -= 1;
        }
        out.push(poly[j]);
        i = j;
    }
    out
}

/// Builds one rest-to-rest piece per waypoint along clearance-respecting,
/// shortcut-smoothed grid paths. Unreachable waypoints are dropped and
/// returned.
pub fn generate_trajectory(
    start: CameraPose,
    waypoints: &[(ViewpointId, CameraPose)],
    grid: &VoxelGrid,
    field: &DistanceField,
    safety_radius: f64,
    lim: DynamicLimits,
) -> (Trajectory, Vec<ViewpointId>) {
    let clearance = Clearance {
        field,
        min_distance: safety_radius,
    };
    let mut pieces = Vec::new();
    let mut dropped = Vec::new();
    let mut cur = start;
    let mut t = 0.0;
    for (id, wp) in waypoints {
        let poly = if cur.position == wp.position {
            alloc::vec![cur.position]
        } else {
            match astar_path(grid, cur.position, wp.position, Some(clearance)) {
                Ok(p) => shortcut(grid, clearance, &p.full_polyline(grid.spec())),
                Err(_) => {
                    dropped.push(*id);
                    continue;
                }
            }
        };
        let mut segments = Vec::new();
        let mut ts = 0.0;
        for w in poly.windows(2) {
            let profile = Trapezoid::new(w[0].dist(w[1]), lim.v_max, lim.a_max);
            segments.push(Segment {
                from: w[0],
                to: w[1],
                t0: ts,
                profile,
            });
            ts += profile.duration();
        }
        let turn = angle_dist(cur.yaw, wp.yaw).max((wp.pitch - cur.pitch).abs());
        let duration = ts.max(turn / lim.omega_max);
        pieces.push(Piece {
            target: Some(*id),
            start: cur,
            end: *wp,
            t0: t,
            duration,
            segments,
        });
        t += duration;
        cur = *wp;
    }
    if pieces.is_empty() {
        return (Trajectory::hold(start), dropped);
    }
    (Trajectory { pieces }, dropped)
}

/// Pose within the visit tolerances of a viewpoint.
pub fn pose_matches(pose: &CameraPose, vp: &CameraPose, p: &PhotographerParams) -> bool {
    pose.position.dist(vp.position) <= p.eps_pos
        && angle_dist(pose.yaw, vp.yaw) <= p.eps_ang
        && (pose.pitch - vp.pitch).abs() <= p.eps_ang
}

/// Fires each viewpoint's visit at most once.
#[derive(Clone, Debug, Default)]
pub struct VisitLatch {
    fired: BTreeSet<ViewpointId>,
}

impl VisitLatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, pose: &CameraPose, vp: ViewpointId, target: &CameraPose, p: &PhotographerParams) -> bool {
        if self.fired.contains(&vp) || !pose_matches(pose, target, p) {
            return false;
        }
        self.fired.insert(vp)
    }

    pub fn fire(&mut self, vp: ViewpointId) -> bool {
        self.fired.insert(vp)
    }

    pub fn has_fired(&self, vp: ViewpointId) -> bool {
        self.fired.contains(&vp)
    }

    pub fn count(&self) -> usize {
        self.fired.len()
    }
}

/// Executes a trajectory tick by tick. Each call stops at the first piece
/// end it crosses so that replanning always starts from rest.
#[derive(Clone, Debug)]
pub struct Follower {
    traj: Trajectory,
    t: f64,
    next: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Advance {
    pub sample: TrajSample,
    /// Seconds of motion consumed this call.
    pub elapsed: f64,
    /// Set when a piece end was reached, carrying that piece's target.
    pub arrived: Option<Option<ViewpointId>>,
}

impl Follower {
    pub fn new(traj: Trajectory) -> Self {
        Follower { traj, t: 0.0, next: 0 }
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn finished(&self) -> bool {
        self.next >= self.traj.pieces.len()
    }

    /// Between pieces: not started, just arrived, or done.
    pub fn at_rest(&self) -> bool {
        match self.next.checked_sub(1).and_then(|k| self.traj.pieces.get(k)) {
            None => self.t == 0.0,
            Some(p) => self.t == p.t0 + p.duration,
        }
    }

    /// Targets not yet reached, the current one first.
    pub fn remaining_targets(&self) -> Vec<ViewpointId> {
        self.traj.pieces[self.next.min(self.traj.pieces.len())..]
            .iter()
            .filter_map(|p| p.target)
            .collect()
    }

    pub fn advance(&mut self, dt: f64) -> Advance {
        let Some(p) = self.traj.pieces.get(self.next) else {
            return Advance {
                sample: self.traj.sample(self.t),
                elapsed: 0.0,
                arrived: None,
            };
        };
        let end = p.t0 + p.duration;
        let t0 = self.t;
        let arrived = if end <= self.t + dt {
            self.t = end;
            self.next += 1;
            Some(p.target)
        } else {
            self.t += dt;
            None
        };
        Advance {
            sample: self.traj.sample(self.t),
            elapsed: self.t - t0,
            arrived,
        }
    }
}
