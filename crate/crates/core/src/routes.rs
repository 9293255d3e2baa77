//! Asymmetric open-tour TSP: cost matrices over poses and a local-search
//! heuristic solver.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{angle_dist, Pose};
use crate::world::{astar_path, sweep_lengths, MoveGraph, VoxelGrid};

/// Finite stand-in for an unreachable edge, in seconds.
pub const UNREACHABLE_COST: f64 = 1e6;

const RESTARTS: usize = 4;
const IMPROVE_EPS: f64 = 1e-9;

/// Speed limits used by the travel-time cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveLimits {
    /// m/s
    pub v_max: f64,
    /// rad/s
    pub yaw_rate_max: f64,
}

/// Square cost matrix in seconds. Node 0 is the start; returning to it is free.
#[derive(Clone, Debug, PartialEq)]
pub struct AtspMatrix {
    n: usize,
    cost: Vec<f64>,
}

impl AtspMatrix {
    /// Builds a matrix from `f(i, j)`; the diagonal and column 0 are forced to
    /// zero and negative entries are clamped.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for j in 1..n {
                if i != j {
                    cost[i * n + j] = f(i, j).max(0.0);
                }
            }
        }
        AtspMatrix { n, cost }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.cost[i * self.n..(i + 1) * self.n]
    }
}

fn time_cost(len: Option<f64>, from: Pose, to: Pose, lim: MoveLimits) -> f64 {
    match len {
        Some(l) => (l / lim.v_max).max(angle_dist(from.yaw, to.yaw) / lim.yaw_rate_max),
        None => UNREACHABLE_COST,
    }
}

/// Travel time between two poses: the slower of translating along the grid
/// path and turning the heading.
pub fn pairwise_cost(grid: &VoxelGrid, from: Pose, to: Pose, lim: MoveLimits) -> f64 {
    let len = astar_path(grid, from.position, to.position, None)
        .ok()
        .map(|p| p.length);
    time_cost(len, from, to, lim)
}

/// Start plus `nodes`. Grid path length is symmetric, so row `i` only
/// searches for the nodes after it. `graph`, when given, must mirror `grid`.
pub fn build_atsp_matrix(
    grid: &VoxelGrid,
    graph: Option<&MoveGraph>,
    start: Pose,
    nodes: &[Pose],
    lim: MoveLimits,
) -> AtspMatrix {
    let all: Vec<Pose> = core::iter::once(start).chain(nodes.iter().copied()).collect();
    let positions: Vec<_> = all.iter().map(|p| p.position).collect();
    let n = all.len();
    let mut lens: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
    for i in 0..n {
        lens[i][i] = Some(0.0);
        if i + 1 < n {
            let row = sweep_lengths(grid, graph, positions[i], &positions[i + 1..]);
            for (k, l) in row.into_iter().enumerate() {
                lens[i][i + 1 + k] = l;
                lens[i + 1 + k][i] = l;
            }
        }
    }
    atsp_from_lengths(&all, |i, j| lens[i][j], lim)
}

/// Matrix over `poses` (node 0 first) from known path lengths.
pub fn atsp_from_lengths(poses: &[Pose], len: impl Fn(usize, usize) -> Option<f64>, lim: MoveLimits) -> AtspMatrix {
    AtspMatrix::from_fn(poses.len(), |i, j| time_cost(len(i, j), poses[i], poses[j], lim))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtspSolution {
    /// Visiting order over nodes `1..n`.
    pub order: Vec<usize>,
    pub cost: f64,
    /// Some edge on the tour is the unreachable sentinel.
    pub uses_sentinel: bool,
}

/// Open-path cost from node 0 through `order`.
pub fn tour_cost(m: &AtspMatrix, order: &[usize]) -> f64 {
    let mut prev = 0;
    let mut c = 0.0;
    for &k in order {
        c += m.get(prev, k);
        prev = k;
    }
    c
}

fn tour_uses_sentinel(m: &AtspMatrix, order: &[usize]) -> bool {
    let mut prev = 0;
    for &k in order {
        if m.get(prev, k) >= UNREACHABLE_COST {
            return true;
        }
        prev = k;
    }
    false
}

/// Open tour from node 0 over every other node.
pub fn solve_atsp(m: &AtspMatrix, seed: u64) -> AtspSolution {
    solve_atsp_with_end(m, seed, None)
}

/// As [`solve_atsp`], optionally forcing `end` to be the last node visited.
pub fn solve_atsp_with_end(m: &AtspMatrix, seed: u64, end: Option<usize>) -> AtspSolution {
    let n = m.n();
    let end = end.filter(|&e| e >= 1 && e < n);
    let free: Vec<usize> = (1..n).filter(|&k| Some(k) != end).collect();
    let cost_of = |seq: &[usize]| {
        let mut c = tour_cost(m, seq);
        if let Some(e) = end {
            c += m.get(seq.last().copied().unwrap_or(0), e);
        }
        c
    };
    let finish = |mut seq: Vec<usize>| {
        if let Some(e) = end {
            seq.push(e);
        }
        let cost = tour_cost(m, &seq);
        let uses_sentinel = tour_uses_sentinel(m, &seq);
        AtspSolution {
            order: seq,
            cost,
            uses_sentinel,
        }
    };
    if free.len() <= 1 {
        return finish(free);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..RESTARTS {
        let mut seq = if r == 0 {
            nearest_neighbor(m, &free)
        } else {
            let mut s = free.clone();
            s.shuffle(&mut rng);
            s
        };
        local_search(&mut seq, &cost_of);
        let c = cost_of(&seq);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, seq));
        }
    }
    finish(best.expect("at least one restart").1)
}

fn nearest_neighbor(m: &AtspMatrix, free: &[usize]) -> Vec<usize> {
    let mut left: Vec<usize> = free.to_vec();
    let mut out = Vec::with_capacity(left.len());
    let mut cur = 0;
    while !left.is_empty() {
        let mut bi = 0;
        for i in 1..left.len() {
            if m.get(cur, left[i]) < m.get(cur, left[bi]) {
                bi = i;
            }
        }
        cur = left.remove(bi);
        out.push(cur);
    }
    out
}

/// First-improvement 2-opt and Or-opt until neither finds a strict gain.
fn local_search(seq: &mut Vec<usize>, cost_of: &impl Fn(&[usize]) -> f64) {
    let n = seq.len();
    let mut cur = cost_of(seq);
    let mut cand = seq.clone();
    loop {
        let mut improved = false;
        // directed 2-opt: reverse seq[i..=j]
        'two: for i in 0..n {
            for j in i + 1..n {
                cand.copy_from_slice(seq);
                cand[i..=j].reverse();
                let c = cost_of(&cand);
                if c < cur - IMPROVE_EPS {
                    seq.copy_from_slice(&cand);
                    cur = c;
                    improved = true;
                    break 'two;
                }
            }
        }
        if improved {
            continue;
        }
        // Or-opt: relocate a segment of 1..=3 nodes
        'or: for len in 1..=3usize.min(n - 1) {
            for i in 0..=n - len {
                let seg: Vec<usize> = seq[i..i + len].to_vec();
                let mut rest: Vec<usize> = Vec::with_capacity(n - len);
                rest.extend_from_slice(&seq[..i]);
                rest.extend_from_slice(&seq[i + len..]);
                for k in 0..=rest.len() {
                    if k == i {
                        continue;
                    }
                    cand.clear();
                    cand.extend_from_slice(&rest[..k]);
                    cand.extend_from_slice(&seg);
                    cand.extend_from_slice(&rest[k..]);
                    let c = cost_of(&cand);
                    if c < cur - IMPROVE_EPS {
                        seq.copy_from_slice(&cand);
                        cur = c;
                        improved = true;
                        break 'or;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Aabb, Vec3, PI};
    use crate::oracle::exhaustive_atsp;
    use crate::world::{GridSpec, VoxelState};
    use rand::Rng;

    fn open(n: f64) -> VoxelGrid {
        let spec = GridSpec::new(Aabb::new(Vec3::ZERO, Vec3::new(n, n, n)), 1.0).unwrap();
        VoxelGrid::new(spec, VoxelState::Free)
    }

    const LIM: MoveLimits = MoveLimits {
        v_max: 2.0,
        yaw_rate_max: 2.0,
    };

    #[test]
    fn identical_poses_cost_nothing() {
        let g = open(8.0);
        let p = Pose::new(Vec3::new(2.5, 2.5, 2.5), 0.7);
        assert_eq!(pairwise_cost(&g, p, p, LIM), 0.0);
    }

    #[test]
    fn yaw_term_dominates_in_place() {
        let g = open(8.0);
        let a = Pose::new(Vec3::new(2.5, 2.5, 2.5), 0.0);
        let b = Pose::new(Vec3::new(2.5, 2.5, 2.5), PI);
        let lim = MoveLimits {
            v_max: 2.0,
            yaw_rate_max: 1.0,
        };
        assert!((pairwise_cost(&g, a, b, lim) - PI).abs() < 1e-12);
    }

    #[test]
    fn corridor_translation_dominates() {
        let spec = GridSpec::new(Aabb::new(Vec3::ZERO, Vec3::new(12.0, 3.0, 3.0)), 1.0).unwrap();
        let mut g = VoxelGrid::new(spec, VoxelState::Occupied);
        for x in 0..12 {
            let v = g.spec().id([x, 1, 1]).unwrap();
            g.set_state(v, VoxelState::Free);
        }
        let a = Pose::new(Vec3::new(0.5, 1.5, 1.5), 0.0);
        let b = Pose::new(Vec3::new(10.5, 1.5, 1.5), 0.1);
        assert!((pairwise_cost(&g, a, b, LIM) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn yaw_is_wrapped() {
        let g = open(8.0);
        let a = Pose::new(Vec3::new(2.5, 2.5, 2.5), PI - 0.1);
        let b = Pose::new(Vec3::new(2.5, 2.5, 2.5), -PI + 0.1);
        assert!((pairwise_cost(&g, a, b, LIM) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unreachable_is_sentinel() {
        let mut g = open(8.0);
        let wall: Vec<_> = g.ids().filter(|v| g.spec().coords(*v)[0] == 4).collect();
        for v in wall {
            g.set_state(v, VoxelState::Occupied);
        }
        let a = Pose::new(Vec3::new(1.5, 1.5, 1.5), 0.0);
        let b = Pose::new(Vec3::new(6.5, 1.5, 1.5), 0.0);
        assert_eq!(pairwise_cost(&g, a, b, LIM), UNREACHABLE_COST);
        let m = build_atsp_matrix(&g, None, a, &[b], LIM);
        let s = solve_atsp(&m, 0);
        assert!(s.uses_sentinel);
    }

    #[test]
    fn matrix_shape_and_free_return() {
        let g = open(10.0);
        let start = Pose::new(Vec3::new(5.5, 5.5, 5.5), 0.0);
        let nodes = [
            Pose::new(Vec3::new(2.5, 5.5, 5.5), 0.0),
            Pose::new(Vec3::new(8.5, 5.5, 5.5), 2.5),
        ];
        let m = build_atsp_matrix(&g, None, start, &nodes, LIM);
        assert_eq!(m.n(), 3);
        for i in 0..3 {
            assert_eq!(m.get(i, 0), 0.0);
            assert_eq!(m.get(i, i), 0.0);
        }
        assert!((m.get(0, 1) - pairwise_cost(&g, start, nodes[0], LIM)).abs() < 1e-9);
        // translation 3 s; yaw 2.5/2 = 1.25 s, so symmetric here
        assert!((m.get(1, 2) - 3.0).abs() < 1e-9);
        let lim = MoveLimits {
            v_max: 2.0,
            yaw_rate_max: 0.5,
        };
        // both directions turn by 2.5 rad; asymmetry appears against the start
        let m = build_atsp_matrix(&g, None, start, &nodes, lim);
        assert!((m.get(1, 2) - 5.0).abs() < 1e-9);
        assert!(m.get(0, 1) != m.get(1, 0));
    }

    #[test]
    fn single_node() {
        let m = AtspMatrix::from_fn(2, |_, _| 3.0);
        let s = solve_atsp(&m, 1);
        assert_eq!(s.order, vec![1]);
        assert_eq!(s.cost, 3.0);
    }

    #[test]
    fn collinear_left_to_right() {
        let xs: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];
        let m = AtspMatrix::from_fn(5, |i, j| (xs[i] - xs[j]).abs());
        let s = solve_atsp(&m, 9);
        assert_eq!(s.order, vec![1, 2, 3, 4]);
        let (opt, ord) = exhaustive_atsp(&m, None);
        assert_eq!(ord, s.order);
        assert_eq!(opt, s.cost);
    }

    #[test]
    fn pinned_end_stays_last() {
        let xs: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];
        let m = AtspMatrix::from_fn(5, |i, j| (xs[i] - xs[j]).abs());
        let s = solve_atsp_with_end(&m, 3, Some(2));
        assert_eq!(*s.order.last().unwrap(), 2);
        let (opt, _) = exhaustive_atsp(&m, Some(2));
        assert!((s.cost - opt).abs() < 1e-12);
    }

    #[test]
    fn random_instances_near_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut good = 0;
        for seed in 0..100u64 {
            let pts: Vec<(f64, f64, f64)> = (0..9)
                .map(|_| (rng.gen_range(0.0f64..20.0), rng.gen_range(0.0f64..20.0), rng.gen_range(-PI..PI)))
                .collect();
            let m = AtspMatrix::from_fn(9, |i, j| {
                let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                let d = crate::geom::sqrt(dx * dx + dy * dy);
                (d / 2.0).max(angle_dist(pts[i].2, pts[j].2) / 0.8)
            });
            let s = solve_atsp(&m, seed);
            let mut seen = s.order.clone();
            seen.sort();
            assert_eq!(seen, (1..9).collect::<Vec<_>>());
            let (opt, _) = exhaustive_atsp(&m, None);
            assert!(s.cost >= opt - 1e-9);
            if s.cost <= opt * 1.05 + 1e-12 {
                good += 1;
            }
        }
        assert!(good >= 95, "{good}/100");
    }

    #[test]
    fn deterministic_for_seed() {
        let m = AtspMatrix::from_fn(7, |i, j| ((i * 7 + j * 3) % 11) as f64);
        assert_eq!(solve_atsp(&m, 5), solve_atsp(&m, 5));
    }
}
