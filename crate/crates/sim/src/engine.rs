//! Tick engine: explorer mapping, coverage, task assignment and photographer
//! execution on one deterministic clock.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use soar_core::assign::{Assigner, Assignment, CostModel, VctStore};
use soar_core::coverage::{CoverageState, ViewpointId};
use soar_core::explore::{exploration_done, ClusterId, FrontierMap, TourCostCache};
use soar_core::geom::{CameraPose, Vec3};
use soar_core::photographer::{generate_trajectory, plan_local_path, DynamicLimits, Follower, Trajectory, VisitLatch};
use soar_core::sensors::{camera_visible, lidar_scan, CameraModel};
use soar_core::world::{known_free_distance_field, DistanceField, MoveGraph, VoxelGrid, VoxelId, VoxelState};

use crate::metrics::{AgentMetrics, CycleRecord, KinoStats, Metrics};
use crate::scenario::Scenario;
use crate::scene::{build_truth, SceneError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{0} start is not in free space")]
    BlockedStart(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Scan { t: f64, changed: usize },
    Viewpoints { t: f64, added: usize, points: usize },
    Assignment { t: f64, cycle: usize, n_vct: usize },
    ExplorerTarget { t: f64, cluster: u32 },
    ExplorerBlocked { t: f64, cluster: u32 },
    Fruitless { t: f64, cluster: u32 },
    Visit { t: f64, agent: usize, vp: u32 },
    Dropped { t: f64, agent: usize, vp: u32 },
    Abandoned { t: f64, vp: u32 },
    ExplorationDone { t: f64 },
    Finished { t: f64 },
}

/// One row of a pose log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub t: f64,
    pub agent_id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub v: f64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub name: String,
    pub pose: CameraPose,
    pub limits: DynamicLimits,
    follower: Option<Follower>,
    pub flight_time: f64,
    pub path_length: f64,
    pub polyline_length: f64,
    speed: f64,
    pub visited: usize,
    pub last_visit: Option<f64>,
    plan_serial: u64,
    pub rows: Vec<PoseRow>,
}

impl Agent {
    fn new(name: String, pose: CameraPose, limits: DynamicLimits) -> Self {
        Agent {
            name,
            pose,
            limits,
            follower: None,
            flight_time: 0.0,
            path_length: 0.0,
            polyline_length: 0.0,
            speed: 0.0,
            visited: 0,
            last_visit: None,
            plan_serial: u64::MAX,
            rows: Vec::new(),
        }
    }

    fn at_rest(&self) -> bool {
        self.follower.as_ref().is_none_or(|f| f.at_rest())
    }

    fn idle(&self) -> bool {
        self.follower.as_ref().is_none_or(|f| f.finished())
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.follower.as_ref().map(|f| f.trajectory())
    }

    fn metrics(&self, role: &str) -> AgentMetrics {
        AgentMetrics {
            name: self.name.clone(),
            role: role.to_string(),
            flight_time: self.flight_time,
            path_length: self.path_length,
            polyline_length: self.polyline_length,
            visited: self.visited,
            last_visit: self.last_visit,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleTiming {
    pub record: CycleRecord,
    pub ga_millis: f64,
}

pub struct Engine {
    pub scenario: Scenario,
    truth: VoxelGrid,
    grid: VoxelGrid,
    field: DistanceField,
    graph: MoveGraph,
    frontier: FrontierMap,
    coverage: CoverageState,
    store: VctStore,
    assigner: Assigner,
    assignment: Assignment,
    cam: CameraModel,
    vp_pose: BTreeMap<ViewpointId, CameraPose>,
    explorer: Agent,
    explorer_target: Option<ClusterId>,
    tour_costs: TourCostCache,
    arrived_at: Option<ClusterId>,
    photographers: Vec<Agent>,
    failures: BTreeMap<ViewpointId, u32>,
    latch: VisitLatch,
    abandoned: BTreeSet<ViewpointId>,
    rng: ChaCha8Rng,
    tick: u64,
    store_version: u64,
    assigned_version: u64,
    assign_serial: u64,
    pending_changes: BTreeSet<VoxelId>,
    events: Vec<Event>,
    cycles: Vec<CycleTiming>,
    kino: KinoStats,
    exploration_time: Option<f64>,
    finished: bool,
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Self, EngineError> {
        let truth = build_truth(&scenario)?;
        let spec = truth.spec().clone();
        let mut grid = VoxelGrid::new(spec.clone(), VoxelState::Unknown);
        let e0 = scenario.explorer_start.expect("resolved scenario");
        let mut starts = vec![("explorer".to_string(), e0)];
        for (k, p) in scenario.photographer_starts.iter().enumerate() {
            starts.push((format!("photographer_{}", k + 1), *p));
        }
        let mut bubble = BTreeSet::new();
        for (name, p) in &starts {
            match spec.voxel_of(*p) {
                Some(v) if truth.is_free(v) => {}
                _ => return Err(EngineError::BlockedStart(name.clone())),
            }
            for v in truth.ids() {
                if truth.is_free(v) && spec.center(v).dist(*p) <= scenario.free_radius {
                    bubble.insert(v);
                }
            }
        }
        for &v in &bubble {
            grid.set_state(v, VoxelState::Free);
        }
        let field = known_free_distance_field(&grid, scenario.field_max);
        let graph = MoveGraph::new(&grid);
        let explorer = Agent::new("explorer".into(), CameraPose::new(e0, 0.0, 0.0), scenario.explorer_limits);
        let photographers = starts[1..]
            .iter()
            .map(|(n, p)| Agent::new(n.clone(), CameraPose::new(*p, 0.0, 0.0), scenario.photographer_limits))
            .collect();
        Ok(Engine {
            cam: scenario.camera(),
            coverage: CoverageState::new(scenario.coverage.clone()),
            assigner: Assigner::new(scenario.assign.clone()),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            scenario,
            truth,
            grid,
            field,
            graph,
            frontier: FrontierMap::new(),
            store: VctStore::new(),
            assignment: Assignment::default(),
            vp_pose: BTreeMap::new(),
            explorer,
            explorer_target: None,
            tour_costs: TourCostCache::new(),
            arrived_at: None,
            photographers,
            failures: BTreeMap::new(),
            latch: VisitLatch::new(),
            abandoned: BTreeSet::new(),
            tick: 0,
            store_version: 0,
            assigned_version: 0,
            assign_serial: 0,
            pending_changes: bubble,
            events: Vec::new(),
            cycles: Vec::new(),
            kino: KinoStats::default(),
            exploration_time: None,
            finished: false,
        })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// Clearance over the known map, unknown space counted as obstacle.
    pub fn field(&self) -> &DistanceField {
        &self.field
    }

    pub fn truth(&self) -> &VoxelGrid {
        &self.truth
    }

    pub fn frontier(&self) -> &FrontierMap {
        &self.frontier
    }

    pub fn coverage(&self) -> &CoverageState {
        &self.coverage
    }

    pub fn store(&self) -> &VctStore {
        &self.store
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn cycles(&self) -> &[CycleTiming] {
        &self.cycles
    }

    pub fn explorer(&self) -> &Agent {
        &self.explorer
    }

    pub fn photographers(&self) -> &[Agent] {
        &self.photographers
    }

    pub fn kinodynamics(&self) -> &KinoStats {
        &self.kino
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.dt
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn exploration_time(&self) -> Option<f64> {
        self.exploration_time
    }

    /// Viewpoints neither visited nor abandoned.
    pub fn open_viewpoints(&self) -> usize {
        self.vp_pose
            .keys()
            .filter(|v| !self.latch.has_fired(**v) && !self.abandoned.contains(v))
            .count()
    }

    pub fn visited_viewpoints(&self) -> usize {
        self.latch.count()
    }

    /// Advances one tick; returns the events it produced.
    pub fn step(&mut self) -> Vec<Event> {
        let first = self.events.len();
        let t = self.time();
        let dt = self.scenario.dt;
        if self.tick.is_multiple_of(self.scenario.ticks_per_cycle()) {
            self.plan(t);
        }
        self.advance_explorer(dt);
        for k in 0..self.photographers.len() {
            self.advance_photographer(k, t, dt);
        }
        self.tick += 1;
        let t_end = self.time();
        log_pose(&mut self.explorer, t_end);
        for a in &mut self.photographers {
            log_pose(a, t_end);
        }
        if !self.finished
            && self.exploration_time.is_some()
            && self.open_viewpoints() == 0
            && self.coverage.pending_points() == 0
        {
            self.finished = true;
            self.events.push(Event::Finished { t: t_end });
        }
        self.events[first..].to_vec()
    }

    /// Steps until done or out of ticks; returns whether it finished.
    pub fn run(&mut self) -> bool {
        while !self.finished && self.tick < self.scenario.max_ticks {
            self.step();
        }
        self.finished
    }

    fn plan(&mut self, t: f64) {
        let explored = self.exploration_time.is_some();
        let mut changed = std::mem::take(&mut self.pending_changes);
        if !explored {
            let scan = lidar_scan(&self.truth, self.explorer.pose.pose(), &self.scenario.lidar);
            let c = self.grid.integrate_scan(self.explorer.pose.position, &scan.hits, &scan.misses);
            self.events.push(Event::Scan { t, changed: c.len() });
            changed.extend(c);
        }
        if !changed.is_empty() {
            self.field = known_free_distance_field(&self.grid, self.scenario.field_max);
            self.graph.update(&self.grid, changed.iter().copied());
        }
        let ep = self.scenario.explore.clone();
        self.frontier.detect(&self.grid, &changed, ep.max_extent);
        self.frontier.refresh_viewpoints(&self.grid, &self.field, &ep);
        if let Some(cid) = self.arrived_at.take() {
            if let Some(c) = self.frontier.cluster(cid) {
                let cells = c.cells.clone();
                self.frontier.record_attempt(self.grid.spec(), &cells, &ep);
                self.events.push(Event::Fruitless { t, cluster: cid.0 });
            }
        }

        let active: BTreeSet<VoxelId> = self.frontier.cells().difference(self.frontier.retired()).copied().collect();
        let report = self.coverage.cycle(&mut self.grid, &self.field, &active, &self.cam);
        if !report.new_viewpoints.is_empty() || report.new_points > 0 {
            self.events.push(Event::Viewpoints {
                t,
                added: report.new_viewpoints.len(),
                points: report.new_points,
            });
        }
        for vp in &report.new_viewpoints {
            self.vp_pose.insert(vp.id, vp.pose);
            self.store
                .add_viewpoint(vp.id, vp.pose.position, &self.grid, &self.scenario.assign);
            self.store_version += 1;
        }

        if !explored && exploration_done(&self.frontier) {
            self.exploration_time = Some(t);
            self.explorer.follower = None;
            self.events.push(Event::ExplorationDone { t });
        }

        if self.store_version != self.assigned_version {
            self.assign(t);
        }

        if self.exploration_time.is_none() && self.explorer.at_rest() && self.explorer.idle() {
            self.plan_explorer(t);
        }
        for k in 0..self.photographers.len() {
            let a = &self.photographers[k];
            if a.at_rest() && (a.idle() || a.plan_serial != self.assign_serial) {
                self.replan_photographer(k, t);
            }
        }
    }

    fn assign(&mut self, t: f64) {
        let positions: Vec<Vec3> = self.photographers.iter().map(|a| a.pose.position).collect();
        let model = CostModel::build(
            &mut self.store,
            &self.grid,
            Some(&self.graph),
            &positions, &self.scenario.assign);
        let seed = self.rng.next_u64();
        let t0 = Instant::now();
        let report = self.assigner.cycle(&model, seed);
        let ga_millis = t0.elapsed().as_secs_f64() * 1e3;
        self.assignment = report.assignment;
        self.assigned_version = self.store_version;
        self.assign_serial += 1;
        let record = CycleRecord {
            cycle: self.cycles.len(),
            t,
            n_vct: model.n_vct(),
            best_fitness: report.fitness,
            k_same: report.k_same,
        };
        self.events.push(Event::Assignment {
            t,
            cycle: record.cycle,
            n_vct: record.n_vct,
        });
        self.cycles.push(CycleTiming { record, ga_millis });
    }

    fn plan_explorer(&mut self, t: f64) {
        let seed = self.rng.next_u64();
        let lim = self.explorer.limits;
        let Ok(plan) = self.tour_costs.plan(
            &self.grid,
            Some(&self.graph),
            self.explorer.pose.pose(),
            self.frontier.clusters(),
            lim.move_limits(),
            seed,
        ) else {
            self.explorer.follower = None;
            return;
        };
        let target = CameraPose::new(plan.pose.position, 0.0, plan.pose.yaw);
        let tag = ViewpointId(plan.target.0);
        let (traj, dropped) = generate_trajectory(
            self.explorer.pose,
            &[(tag, target)],
            &self.grid,
            &self.field,
            self.scenario.photographer.safety_radius,
            lim,
        );
        if !dropped.is_empty() {
            if let Some(c) = self.frontier.cluster(plan.target) {
                let cells = c.cells.clone();
                self.frontier
                    .record_attempt(self.grid.spec(), &cells, &self.scenario.explore);
            }
            self.events.push(Event::ExplorerBlocked { t, cluster: plan.target.0 });
            self.explorer.follower = None;
            return;
        }
        self.kino.audit(&traj, &self.field, lim, self.scenario.photographer.safety_radius);
        self.events.push(Event::ExplorerTarget { t, cluster: plan.target.0 });
        self.explorer_target = Some(plan.target);
        self.explorer.follower = Some(Follower::new(traj));
    }

    fn replan_photographer(&mut self, k: usize, t: f64) {
        self.photographers[k].plan_serial = self.assign_serial;
        let global: Vec<_> = self
            .assignment
            .paths
            .get(k)
            .map(|p| p.iter().copied().filter(|id| self.store.get(*id).is_some()).collect())
            .unwrap_or_default();
        let seed = self.rng.next_u64();
        let pp = self.scenario.photographer.clone();
        let lim = self.photographers[k].limits;
        let start = self.photographers[k].pose;
        let latch = &self.latch;
        let vp_pose = &self.vp_pose;
        let plan = plan_local_path(
            start,
            &global,
            &self.store,
            |v| vp_pose.get(&v).copied().filter(|_| !latch.has_fired(v)),
            &self.grid,
            lim.move_limits(),
            pp.k_local,
            seed,
        );
        let Ok(plan) = plan else {
            self.photographers[k].follower = None;
            return;
        };
        let wps: Vec<(ViewpointId, CameraPose)> = plan
            .viewpoints
            .iter()
            .take(pp.m_kc)
            .map(|v| (*v, self.vp_pose[v]))
            .collect();
        let (traj, dropped) = generate_trajectory(start, &wps, &self.grid, &self.field, pp.safety_radius, lim);
        for vp in dropped {
            self.events.push(Event::Dropped { t, agent: k, vp: vp.0 });
            let n = self.failures.entry(vp).or_insert(0);
            *n += 1;
            if *n >= pp.max_failures {
                self.abandon(vp, t);
            }
        }
        if traj.targets().is_empty() {
            self.photographers[k].follower = None;
            return;
        }
        self.kino.audit(&traj, &self.field, lim, pp.safety_radius);
        self.photographers[k].follower = Some(Follower::new(traj));
    }

    fn abandon(&mut self, vp: ViewpointId, t: f64) {
        if !self.abandoned.insert(vp) {
            return;
        }
        if let Some(owner) = self.store.owner_of(vp) {
            self.store
                .mark_visited(owner, vp, &self.scenario.assign)
                .expect("owner holds viewpoint");
            self.store_version += 1;
        }
        self.events.push(Event::Abandoned { t, vp: vp.0 });
    }

    fn visit(&mut self, k: usize, vp: ViewpointId, t: f64) {
        if self.abandoned.contains(&vp) || !self.vp_pose.contains_key(&vp) || !self.latch.fire(vp) {
            return;
        }
        if let Some(owner) = self.store.owner_of(vp) {
            self.store
                .mark_visited(owner, vp, &self.scenario.assign)
                .expect("owner holds viewpoint");
            self.store_version += 1;
        }
        let a = &mut self.photographers[k];
        a.visited += 1;
        a.last_visit = Some(t);
        self.events.push(Event::Visit { t, agent: k, vp: vp.0 });
    }

    fn advance_explorer(&mut self, dt: f64) {
        let Some(f) = self.explorer.follower.as_mut() else {
            self.explorer.speed = 0.0;
            return;
        };
        let d0 = f.trajectory().distance_at(f.time());
        let adv = f.advance(dt);
        self.explorer.polyline_length += f.trajectory().distance_at(f.time()) - d0;
        apply_motion(&mut self.explorer, &adv);
        if adv.arrived.is_some() {
            self.explorer.follower = None;
            self.arrived_at = self.explorer_target.take();
        }
    }

    fn advance_photographer(&mut self, k: usize, t: f64, dt: f64) {
        let Some(f) = self.photographers[k].follower.as_mut() else {
            self.photographers[k].speed = 0.0;
            return;
        };
        let d0 = f.trajectory().distance_at(f.time());
        let adv = f.advance(dt);
        let moved = f.trajectory().distance_at(f.time()) - d0;
        let upcoming = f.remaining_targets();
        apply_motion(&mut self.photographers[k], &adv);
        self.photographers[k].polyline_length += moved;
        let t_now = t + adv.elapsed;
        let pose = self.photographers[k].pose;
        let pp = self.scenario.photographer.clone();
        for vp in upcoming {
            if let Some(target) = self.vp_pose.get(&vp).copied() {
                if !self.latch.has_fired(vp) && soar_core::photographer::pose_matches(&pose, &target, &pp) {
                    self.visit(k, vp, t_now);
                }
            }
        }
        if let Some(target) = adv.arrived {
            if let Some(vp) = target {
                self.visit(k, vp, t_now);
            }
            let a = &self.photographers[k];
            if a.idle() || a.plan_serial != self.assign_serial {
                self.replan_photographer(k, t_now);
            }
        }
    }

    /// Truth-space sanity: covering records re-checked with the camera model
    /// on the final map. Returns the verified count.
    pub fn verified_points(&self) -> usize {
        let pos: BTreeMap<_, _> = self.coverage.points().iter().map(|p| (p.id, p.position)).collect();
        let vps: BTreeMap<_, _> = self.coverage.viewpoints().iter().map(|v| (v.id, v.pose)).collect();
        self.coverage
            .index()
            .iter()
            .filter(|(pid, vid)| camera_visible(&self.grid, &vps[vid], pos[pid], &self.cam))
            .count()
    }

    /// Stored points across every extracted voxel.
    pub fn stored_extracted_points(&self) -> usize {
        self.grid
            .ids()
            .filter(|v| self.grid.is_extracted(*v))
            .map(|v| self.grid.points(v).len())
            .sum()
    }

    pub fn metrics(&self) -> Metrics {
        let extracted = self.coverage.points().len();
        let verified = self.verified_points();
        let photographers: Vec<AgentMetrics> = self.photographers.iter().map(|a| a.metrics("photographer")).collect();
        let completion_time = if self.finished {
            Some(
                self.photographers
                    .iter()
                    .filter_map(|a| a.last_visit)
                    .fold(0.0, f64::max),
            )
        } else {
            None
        };
        let mut agents = vec![self.explorer.metrics("explorer")];
        agents.extend(photographers);
        Metrics {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            complete: self.finished,
            ticks: self.tick,
            sim_time: self.time(),
            exploration_time: self.exploration_time,
            completion_time,
            agents,
            viewpoint_count: self.vp_pose.len(),
            visited_viewpoints: self.latch.count(),
            abandoned_viewpoints: self.abandoned.len(),
            extracted_points: extracted,
            covered_points: self.coverage.covered_points(),
            verified_points: verified,
            abandoned_points: self.coverage.abandoned_points(),
            coverage_rate: self.coverage.coverage_rate(),
            verified_coverage_rate: if extracted == 0 { 1.0 } else { verified as f64 / extracted as f64 },
            cycles: self.cycles.iter().map(|c| c.record.clone()).collect(),
            kinodynamic: self.kino.clone(),
        }
    }
}

fn apply_motion(a: &mut Agent, adv: &soar_core::photographer::Advance) {
    let speed = adv.sample.velocity.norm();
    a.path_length += 0.5 * (a.speed + speed) * adv.elapsed;
    a.flight_time += adv.elapsed;
    a.speed = speed;
    a.pose = adv.sample.pose;
}

fn log_pose(a: &mut Agent, t: f64) {
    let p = a.pose;
    a.rows.push(PoseRow {
        t,
        agent_id: a.name.clone(),
        x: p.position.x,
        y: p.position.y,
        z: p.position.z,
        yaw: p.yaw,
        pitch: p.pitch,
        v: a.speed,
    });
}
