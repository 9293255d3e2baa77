//! Viewpoint-cluster tasks and the consistency-aware genetic multi-depot
//! MTSP that hands them out to photographers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::ViewpointId;
use crate::geom::{exp, Vec3};
use crate::world::{sweep_lengths, MoveGraph, RayHit, VoxelGrid};

/// Path length standing in for "no route", metres.
pub const UNREACHABLE_LEN: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignParams {
    /// metres
    pub d_thr: f64,
    pub lambda_h: f64,
    pub epsilon: f64,
    /// Consistency reward R.
    pub reward: f64,
    /// Consistency decay α, 1/m.
    pub alpha: f64,
    pub generations: usize,
    pub population: usize,
    pub tournament: usize,
    pub elitism: usize,
    pub max_mutations: usize,
}

impl Default for AssignParams {
    fn default() -> Self {
        AssignParams {
            d_thr: 6.0,
            lambda_h: 0.6,
            epsilon: 1e-4,
            reward: 50.0,
            alpha: 0.1,
            generations: 700,
            population: 32,
            tournament: 3,
            elitism: 2,
            max_mutations: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VctId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignError {
    #[error("unknown task {0:?}")]
    UnknownVct(VctId),
    #[error("viewpoint {1:?} is not a member of task {0:?}")]
    NotAMember(VctId, ViewpointId),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VctMember {
    pub vp: ViewpointId,
    pub position: Vec3,
}

/// Viewpoint-cluster task.
#[derive(Clone, Debug, PartialEq)]
pub struct Vct {
    pub id: VctId,
    pub members: Vec<VctMember>,
    pub p_avg: Vec3,
    pub h_cost: f64,
}

impl Vct {
    fn refresh(&mut self, p: &AssignParams) {
        let mut s = Vec3::ZERO;
        for m in &self.members {
            s += m.position;
        }
        self.p_avg = s / self.members.len().max(1) as f64;
        self.h_cost = h_cost(self.members.len(), p);
    }
}

/// Execution cost of a task with `n` viewpoints.
pub fn h_cost(n: usize, p: &AssignParams) -> f64 {
    p.lambda_h * (n.saturating_sub(1)) as f64 * p.d_thr
}

/// Open tasks, viewpoint ownership and the lazily filled inter-task path
/// length cache.
#[derive(Clone, Debug, Default)]
pub struct VctStore {
    vcts: BTreeMap<VctId, Vct>,
    owner: BTreeMap<ViewpointId, VctId>,
    l_cache: BTreeMap<(VctId, VctId), f64>,
    cached_at: BTreeMap<VctId, Vec3>,
    next_id: u32,
}

impl VctStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vcts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vcts.is_empty()
    }

    pub fn get(&self, id: VctId) -> Option<&Vct> {
        self.vcts.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vct> {
        self.vcts.values()
    }

    pub fn ids(&self) -> Vec<VctId> {
        self.vcts.keys().copied().collect()
    }

    pub fn owner_of(&self, vp: ViewpointId) -> Option<VctId> {
        self.owner.get(&vp).copied()
    }

    /// Joins the nearest compatible task (every member within `d_thr` and
    /// visible), or opens a new one.
    pub fn add_viewpoint(&mut self, vp: ViewpointId, position: Vec3, grid: &VoxelGrid, p: &AssignParams) -> VctId {
        let mut cands: Vec<(f64, VctId)> = self
            .vcts
            .values()
            .map(|v| (v.p_avg.dist(position), v.id))
            .filter(|(d, _)| *d <= p.d_thr)
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let joined = cands.into_iter().map(|c| c.1).find(|id| {
            self.vcts[id]
                .members
                .iter()
                .all(|m| m.position.dist(position) <= p.d_thr && grid.raycast(position, m.position) == RayHit::Clear)
        });
        let id = match joined {
            Some(id) => id,
            None => {
                let id = VctId(self.next_id);
                self.next_id += 1;
                self.vcts.insert(
                    id,
                    Vct {
                        id,
                        members: Vec::new(),
                        p_avg: position,
                        h_cost: 0.0,
                    },
                );
                id
            }
        };
        let v = self.vcts.get_mut(&id).expect("present");
        v.members.push(VctMember { vp, position });
        v.refresh(p);
        self.owner.insert(vp, id);
        self.maybe_invalidate(id, p);
        id
    }

    /// Drops a visited viewpoint; returns `true` when its task is now gone.
    pub fn mark_visited(&mut self, id: VctId, vp: ViewpointId, p: &AssignParams) -> Result<bool, AssignError> {
        let v = self.vcts.get_mut(&id).ok_or(AssignError::UnknownVct(id))?;
        let k = v
            .members
            .iter()
            .position(|m| m.vp == vp)
            .ok_or(AssignError::NotAMember(id, vp))?;
        v.members.remove(k);
        self.owner.remove(&vp);
        if v.members.is_empty() {
            self.vcts.remove(&id);
            self.cached_at.remove(&id);
            self.l_cache.retain(|(a, b), _| *a != id && *b != id);
            return Ok(true);
        }
        v.refresh(p);
        self.maybe_invalidate(id, p);
        Ok(false)
    }

    fn maybe_invalidate(&mut self, id: VctId, p: &AssignParams) {
        let Some(at) = self.cached_at.get(&id) else {
            return;
        };
        if at.dist(self.vcts[&id].p_avg) > p.d_thr / 2.0 {
            self.cached_at.remove(&id);
            self.l_cache.retain(|(a, b), _| *a != id && *b != id);
        }
    }

    /// Point used for path searches: `p_avg` when free, else the nearest
    /// member position.
    pub fn anchor(&self, id: VctId, grid: &VoxelGrid) -> Vec3 {
        let v = &self.vcts[&id];
        let free = grid.spec().voxel_of(v.p_avg).is_some_and(|x| grid.is_free(x));
        if free {
            return v.p_avg;
        }
        v.members
            .iter()
            .map(|m| m.position)
            .min_by(|a, b| a.dist_sq(v.p_avg).total_cmp(&b.dist_sq(v.p_avg)))
            .unwrap_or(v.p_avg)
    }

    /// Fills missing inter-task path lengths among `ids`. The task missing
    /// the most pairs searches first; lengths are stored both ways.
    pub fn ensure_l_costs(&mut self, ids: &[VctId], grid: &VoxelGrid, graph: Option<&MoveGraph>) {
        let anchors: Vec<Vec3> = ids.iter().map(|id| self.anchor(*id, grid)).collect();
        loop {
            let missing_of = |i: usize, cache: &BTreeMap<(VctId, VctId), f64>| -> Vec<usize> {
                (0..ids.len())
                    .filter(|&j| j != i && !cache.contains_key(&(ids[i], ids[j])))
                    .collect()
            };
            let mut pick: Option<(usize, Vec<usize>)> = None;
            for i in 0..ids.len() {
                let m = missing_of(i, &self.l_cache);
                if !m.is_empty() && pick.as_ref().is_none_or(|p| m.len() > p.1.len()) {
                    pick = Some((i, m));
                }
            }
            let Some((i, missing)) = pick else {
                break;
            };
            let a = ids[i];
            let targets: Vec<Vec3> = missing.iter().map(|&j| anchors[j]).collect();
            let lens = sweep_lengths(grid, graph, anchors[i], &targets);
            for (k, &j) in missing.iter().enumerate() {
                let l = lens[k].unwrap_or(UNREACHABLE_LEN);
                self.l_cache.insert((a, ids[j]), l);
                self.l_cache.insert((ids[j], a), l);
            }
            self.cached_at.entry(a).or_insert(self.vcts[&a].p_avg);
            for &j in &missing {
                let b = ids[j];
                self.cached_at.entry(b).or_insert(self.vcts[&b].p_avg);
            }
        }
    }

    pub fn l_cost(&self, a: VctId, b: VctId) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        self.l_cache.get(&(a, b)).copied()
    }

    pub fn cached_pairs(&self) -> usize {
        self.l_cache.len()
    }
}

/// Dense cost matrices over the open tasks (index order = `ids`).
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    pub ids: Vec<VctId>,
    /// photographer × task
    pub c_d: Vec<Vec<f64>>,
    /// task × task
    pub c_vct: Vec<Vec<f64>>,
    pub reward: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl CostModel {
    pub fn from_matrices(ids: Vec<VctId>, c_d: Vec<Vec<f64>>, c_vct: Vec<Vec<f64>>, p: &AssignParams) -> Self {
        CostModel {
            ids,
            c_d,
            c_vct,
            reward: p.reward,
            alpha: p.alpha,
            epsilon: p.epsilon,
        }
    }

    /// Path lengths from each photographer to every task anchor plus the
    /// task's execution cost, and cached inter-task lengths plus the target's
    /// execution cost.
    pub fn build(
        store: &mut VctStore,
        grid: &VoxelGrid,
        graph: Option<&MoveGraph>,
        photographers: &[Vec3],
        p: &AssignParams,
    ) -> Self {
        let ids = store.ids();
        store.ensure_l_costs(&ids, grid, graph);
        let anchors: Vec<Vec3> = ids.iter().map(|id| store.anchor(*id, grid)).collect();
        let h: Vec<f64> = ids.iter().map(|id| store.get(*id).expect("open").h_cost).collect();
        let c_d = photographers
            .iter()
            .map(|ph| {
                let lens = sweep_lengths(grid, graph, *ph, &anchors);
                lens.iter()
                    .zip(&h)
                    .map(|(l, hc)| l.unwrap_or(UNREACHABLE_LEN) + hc)
                    .collect()
            })
            .collect();
        let n = ids.len();
        let c_vct = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        if a == b {
                            0.0
                        } else {
                            store.l_cost(ids[a], ids[b]).unwrap_or(UNREACHABLE_LEN) + h[b]
                        }
                    })
                    .collect()
            })
            .collect();
        Self::from_matrices(ids, c_d, c_vct, p)
    }

    pub fn n_vct(&self) -> usize {
        self.ids.len()
    }

    pub fn n_photographers(&self) -> usize {
        self.c_d.len()
    }

    pub fn index_of(&self, id: VctId) -> Option<usize> {
        self.ids.iter().position(|x| *x == id)
    }
}

/// One ordered task list (dense indices) per photographer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Individual {
    pub paths: Vec<Vec<usize>>,
}

impl Individual {
    pub fn empty(n_p: usize) -> Self {
        Individual { paths: vec![Vec::new(); n_p] }
    }

    /// Every task index in `0..n` appears exactly once.
    pub fn is_valid(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        let mut count = 0;
        for p in &self.paths {
            for &x in p {
                if x >= n || seen[x] {
                    return false;
                }
                seen[x] = true;
                count += 1;
            }
        }
        count == n
    }
}

/// Published assignment in task ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub paths: Vec<Vec<VctId>>,
}

impl Assignment {
    pub fn to_dense(&self, model: &CostModel) -> Individual {
        Individual {
            paths: self
                .paths
                .iter()
                .map(|p| p.iter().filter_map(|id| model.index_of(*id)).collect())
                .collect(),
        }
    }

    pub fn from_dense(ind: &Individual, model: &CostModel) -> Self {
        Assignment {
            paths: ind
                .paths
                .iter()
                .map(|p| p.iter().map(|&i| model.ids[i]).collect())
                .collect(),
        }
    }
}

/// Distance cost of one photographer's path.
pub fn path_cost(path: &[usize], photographer: usize, model: &CostModel) -> f64 {
    let Some(&first) = path.first() else {
        return 0.0;
    };
    let mut c = model.c_d[photographer][first];
    for w in path.windows(2) {
        c += model.c_vct[w[0]][w[1]];
    }
    c
}

/// Length of the common prefix.
pub fn k_same(path: &[usize], prev: &[usize]) -> usize {
    path.iter().zip(prev).take_while(|(a, b)| a == b).count()
}

/// Reward for keeping the previous path's prefix, decaying with the
/// cumulative leg cost along `path`.
pub fn consistency_cost(path: &[usize], prev: &[usize], model: &CostModel) -> f64 {
    let k = k_same(path, prev);
    let mut dsum = 0.0;
    let mut c = 0.0;
    for j in 0..k {
        if j > 0 {
            dsum += model.c_vct[path[j - 1]][path[j]];
        }
        c -= model.reward * exp(-model.alpha * dsum);
    }
    c
}

/// Min-max fitness with a small total-cost tie breaker. `prev` holds the
/// previous paths already filtered to open tasks.
pub fn fitness(ind: &Individual, prev: Option<&Individual>, model: &CostModel) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (i, path) in ind.paths.iter().enumerate() {
        let mut c = path_cost(path, i, model);
        if let Some(pp) = prev.and_then(|p| p.paths.get(i)) {
            c += consistency_cost(path, pp, model);
        }
        max = max.max(c);
        sum += c;
    }
    if ind.paths.is_empty() {
        return 0.0;
    }
    -(max + model.epsilon * sum)
}

/// Warm start: the previous paths with every task they lack inserted at an
/// independent random position. Without `prev`, random partitions.
pub fn init_population(
    prev: Option<&Individual>,
    n_vct: usize,
    n_p: usize,
    pop_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Individual> {
    let base = match prev {
        Some(p) => {
            let mut b = p.clone();
            b.paths.resize(n_p, Vec::new());
            b
        }
        None => Individual::empty(n_p),
    };
    let present: BTreeSet<usize> = base.paths.iter().flatten().copied().collect();
    let fresh: Vec<usize> = (0..n_vct).filter(|i| !present.contains(i)).collect();
    (0..pop_size)
        .map(|_| {
            let mut ind = base.clone();
            let mut order = fresh.clone();
            if prev.is_none() {
                shuffle(&mut order, rng);
            }
            for x in order {
                let k = rng.gen_range(0..n_p.max(1));
                let pos = rng.gen_range(0..=ind.paths[k].len());
                ind.paths[k].insert(pos, x);
            }
            ind
        })
        .collect()
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    Reverse,
    OrMove,
    Move,
    Swap,
}

/// Applies one operator chosen uniformly among those applicable. Returns
/// `None` when no operator applies.
pub fn mutate(ind: &mut Individual, rng: &mut ChaCha8Rng) -> Option<Mutation> {
    let long: Vec<usize> = (0..ind.paths.len()).filter(|&k| ind.paths[k].len() >= 2).collect();
    let nonempty: Vec<usize> = (0..ind.paths.len()).filter(|&k| !ind.paths[k].is_empty()).collect();
    let mut ops = Vec::with_capacity(4);
    if !long.is_empty() {
        ops.push(Mutation::Reverse);
        ops.push(Mutation::OrMove);
    }
    if !nonempty.is_empty() && ind.paths.len() >= 2 {
        ops.push(Mutation::Move);
    }
    if nonempty.len() >= 2 {
        ops.push(Mutation::Swap);
    }
    if ops.is_empty() {
        return None;
    }
    let op = ops[rng.gen_range(0..ops.len())];
    match op {
        Mutation::Reverse => {
            let p = &mut ind.paths[long[rng.gen_range(0..long.len())]];
            let i = rng.gen_range(0..p.len() - 1);
            let j = rng.gen_range(i + 1..p.len());
            p[i..=j].reverse();
        }
        Mutation::OrMove => {
            let p = &mut ind.paths[long[rng.gen_range(0..long.len())]];
            let len = rng.gen_range(1..=3.min(p.len() - 1));
            let i = rng.gen_range(0..=p.len() - len);
            let seg: Vec<usize> = p.drain(i..i + len).collect();
            let mut k = rng.gen_range(0..=p.len());
            if k == i && !p.is_empty() {
                k = (k + 1) % (p.len() + 1);
            }
            for (o, x) in seg.into_iter().enumerate() {
                p.insert(k + o, x);
            }
        }
        Mutation::Move => {
            let from = nonempty[rng.gen_range(0..nonempty.len())];
            let mut to = rng.gen_range(0..ind.paths.len() - 1);
            if to >= from {
                to += 1;
            }
            let i = rng.gen_range(0..ind.paths[from].len());
            let x = ind.paths[from].remove(i);
            let pos = rng.gen_range(0..=ind.paths[to].len());
            ind.paths[to].insert(pos, x);
        }
        Mutation::Swap => {
            let a = rng.gen_range(0..nonempty.len());
            let mut b = rng.gen_range(0..nonempty.len() - 1);
            if b >= a {
                b += 1;
            }
            let (pa, pb) = (nonempty[a], nonempty[b]);
            let i = rng.gen_range(0..ind.paths[pa].len());
            let j = rng.gen_range(0..ind.paths[pb].len());
            let t = ind.paths[pa][i];
            ind.paths[pa][i] = ind.paths[pb][j];
            ind.paths[pb][j] = t;
        }
    }
    debug_assert!(ind.paths.iter().flatten().count() == {
        let s: BTreeSet<usize> = ind.paths.iter().flatten().copied().collect();
        s.len()
    });
    Some(op)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaResult {
    pub best: Individual,
    pub fitness: f64,
    /// Best-so-far fitness after initialisation (index 0) and after every
    /// generation.
    pub trace: Vec<f64>,
}

/// Mutation-only GA with tournament selection and elitism. The best
/// individual ever seen is replaced only on strict improvement.
pub fn run_ga(
    mut pop: Vec<Individual>,
    model: &CostModel,
    prev: Option<&Individual>,
    p: &AssignParams,
    rng: &mut ChaCha8Rng,
) -> GaResult {
    assert!(!pop.is_empty(), "population must not be empty");
    let size = pop.len();
    let mut fit: Vec<f64> = pop.iter().map(|i| fitness(i, prev, model)).collect();
    let mut bi = 0;
    for i in 1..size {
        if fit[i] > fit[bi] {
            bi = i;
        }
    }
    let mut best = pop[bi].clone();
    let mut best_fit = fit[bi];
    let mut trace = Vec::with_capacity(p.generations + 1);
    trace.push(best_fit);
    for _ in 0..p.generations {
        let mut rank: Vec<usize> = (0..size).collect();
        rank.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));
        let mut next: Vec<Individual> = Vec::with_capacity(size);
        let mut next_fit: Vec<f64> = Vec::with_capacity(size);
        for &e in rank.iter().take(p.elitism.min(size)) {
            next.push(pop[e].clone());
            next_fit.push(fit[e]);
        }
        while next.len() < size {
            let mut w = rng.gen_range(0..size);
            for _ in 1..p.tournament.max(1) {
                let c = rng.gen_range(0..size);
                if fit[c] > fit[w] || (fit[c] == fit[w] && c < w) {
                    w = c;
                }
            }
            let mut child = pop[w].clone();
            let mut m = 1;
            while m < p.max_mutations && rng.gen_bool(0.5) {
                m += 1;
            }
            for _ in 0..m {
                mutate(&mut child, rng);
            }
            let f = fitness(&child, prev, model);
            next.push(child);
            next_fit.push(f);
        }
        pop = next;
        fit = next_fit;
        for i in 0..size {
            if fit[i] > best_fit {
                best_fit = fit[i];
                best = pop[i].clone();
            }
        }
        trace.push(best_fit);
    }
    GaResult {
        best,
        fitness: best_fit,
        trace,
    }
}

/// Gives an idle photographer its cheapest task when open tasks exist and
/// the move improves fitness.
pub fn repair_idle(ind: &mut Individual, prev: Option<&Individual>, model: &CostModel) {
    if model.n_vct() == 0 {
        return;
    }
    for k in 0..ind.paths.len() {
        if !ind.paths[k].is_empty() {
            continue;
        }
        let Some(j) = (0..model.n_vct()).min_by(|&a, &b| model.c_d[k][a].total_cmp(&model.c_d[k][b])) else {
            continue;
        };
        let mut cand = ind.clone();
        for p in cand.paths.iter_mut() {
            p.retain(|&x| x != j);
        }
        cand.paths[k].push(j);
        if fitness(&cand, prev, model) > fitness(ind, prev, model) {
            *ind = cand;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentReport {
    pub assignment: Assignment,
    pub fitness: f64,
    /// Per photographer, against the previous published paths.
    pub k_same: Vec<usize>,
    pub trace: Vec<f64>,
}

/// Cross-cycle assigner state: the previously published assignment.
#[derive(Clone, Debug, Default)]
pub struct Assigner {
    pub params: AssignParams,
    prev: Option<Assignment>,
}

impl Assigner {
    pub fn new(params: AssignParams) -> Self {
        Assigner { params, prev: None }
    }

    pub fn previous(&self) -> Option<&Assignment> {
        self.prev.as_ref()
    }

    /// Warm-started GA over the current model; publishes the best individual.
    pub fn cycle(&mut self, model: &CostModel, seed: u64) -> AssignmentReport {
        self.cycle_with(model, seed, true)
    }

    /// As [`Assigner::cycle`], optionally ignoring the previous result when
    /// seeding the population (the consistency term still uses it).
    pub fn cycle_with(&mut self, model: &CostModel, seed: u64, warm: bool) -> AssignmentReport {
        let n_p = model.n_photographers();
        let prev = self.prev.as_ref().map(|a| {
            let mut d = a.to_dense(model);
            d.paths.resize(n_p, Vec::new());
            d
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut best, mut fit, trace) = if model.n_vct() == 0 {
            let e = Individual::empty(n_p);
            let f = fitness(&e, prev.as_ref(), model);
            (e, f, vec![f])
        } else {
            let start = if warm { prev.as_ref() } else { None };
            let pop = init_population(start, model.n_vct(), n_p, self.params.population, &mut rng);
            let r = run_ga(pop, model, prev.as_ref(), &self.params, &mut rng);
            (r.best, r.fitness, r.trace)
        };
        repair_idle(&mut best, prev.as_ref(), model);
        fit = fit.max(fitness(&best, prev.as_ref(), model));
        let k_same = (0..n_p)
            .map(|k| {
                prev.as_ref()
                    .map_or(0, |p| self::k_same(&best.paths[k], &p.paths[k]))
            })
            .collect();
        let assignment = Assignment::from_dense(&best, model);
        self.prev = Some(assignment.clone());
        AssignmentReport {
            assignment,
            fitness: fit,
            k_same,
            trace,
        }
    }
}
