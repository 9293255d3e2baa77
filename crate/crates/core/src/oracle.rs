//! Exhaustive and brute-force reference implementations. They are slow on
//! purpose and share no code with the planners they check.

use alloc::vec;
use alloc::vec::Vec;

use alloc::collections::BTreeSet;

use crate::assign::CostModel;
use crate::geom::exp;
use crate::routes::AtspMatrix;
use crate::world::{VoxelGrid, VoxelId, VoxelState};

/// Optimal open tour by enumerating every order of nodes `1..n`, optionally
/// forcing `end` last. Returns (cost, order); the lexicographically first
/// optimum wins ties.
pub fn exhaustive_atsp(m: &AtspMatrix, end: Option<usize>) -> (f64, Vec<usize>) {
    let n = m.n();
    let nodes: Vec<usize> = (1..n).filter(|&k| Some(k) != end).collect();
    let mut best = (f64::INFINITY, Vec::new());
    let mut used = vec![false; nodes.len()];
    let mut cur = Vec::with_capacity(nodes.len() + 1);
    fn rec(
        m: &AtspMatrix,
        nodes: &[usize],
        end: Option<usize>,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if cur.len() == nodes.len() {
            let mut total = acc;
            let mut order = cur.clone();
            if let Some(e) = end {
                total += m.get(*cur.last().unwrap_or(&0), e);
                order.push(e);
            }
            if total < best.0 {
                *best = (total, order);
            }
            return;
        }
        let prev = *cur.last().unwrap_or(&0);
        for i in 0..nodes.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            cur.push(nodes[i]);
            rec(m, nodes, end, used, cur, acc + m.get(prev, nodes[i]), best);
            cur.pop();
            used[i] = false;
        }
    }
    rec(m, &nodes, end, &mut used, &mut cur, 0.0, &mut best);
    best
}

/// Full-grid evaluation of the surface-frontier predicate straight from
/// coordinates: a free voxel `c` with `c + a` occupied and `c + b` unknown for
/// some pair of perpendicular unit offsets `a`, `b`.
pub fn brute_force_frontiers(grid: &VoxelGrid) -> BTreeSet<VoxelId> {
    let spec = grid.spec();
    let units: [[i64; 3]; 6] = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 0, 0], [0, -1, 0], [0, 0, -1]];
    let state = |c: [i64; 3]| spec.id(c).map(|v| grid.state(v));
    let mut out = BTreeSet::new();
    for x in 0..spec.dims[0] as i64 {
        for y in 0..spec.dims[1] as i64 {
            for z in 0..spec.dims[2] as i64 {
                if state([x, y, z]) != Some(VoxelState::Free) {
                    continue;
                }
                let mut hit = false;
                for a in units {
                    for b in units {
                        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                        if dot != 0 {
                            continue;
                        }
                        if state([x + a[0], y + a[1], z + a[2]]) == Some(VoxelState::Occupied)
                            && state([x + b[0], y + b[1], z + b[2]]) == Some(VoxelState::Unknown)
                        {
                            hit = true;
                        }
                    }
                }
                if hit {
                    out.insert(spec.id([x, y, z]).expect("in range"));
                }
            }
        }
    }
    out
}

/// Best min-max assignment by enumerating every permutation of the tasks and
/// every split of it into consecutive per-photographer paths. Consistency is
/// scored against `prev` (dense indices) when given. Returns (fitness, paths).
pub fn exhaustive_mdmtsp(model: &CostModel, prev: Option<&[Vec<usize>]>) -> (f64, Vec<Vec<usize>>) {
    let n = model.ids.len();
    let np = model.c_d.len();
    let score = |paths: &[Vec<usize>]| -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for (k, p) in paths.iter().enumerate() {
            let mut c = 0.0;
            let mut legs = Vec::new();
            for (j, &x) in p.iter().enumerate() {
                let leg = if j == 0 { model.c_d[k][x] } else { model.c_vct[p[j - 1]][x] };
                c += leg;
                legs.push(leg);
            }
            if let Some(pp) = prev.and_then(|v| v.get(k)) {
                let mut d = 0.0;
                for j in 0..p.len().min(pp.len()) {
                    if p[j] != pp[j] {
                        break;
                    }
                    if j > 0 {
                        d += legs[j];
                    }
                    c -= model.reward * exp(-model.alpha * d);
                }
            }
            if c > max {
                max = c;
            }
            sum += c;
        }
        -(max + model.epsilon * sum)
    };
    let mut best = (f64::NEG_INFINITY, vec![Vec::new(); np]);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        // cut points: np - 1 non-decreasing positions in 0..=n
        let mut cuts = vec![0usize; np.saturating_sub(1)];
        loop {
            let mut paths = Vec::with_capacity(np);
            let mut s = 0;
            for &c in &cuts {
                paths.push(perm[s..c].to_vec());
                s = c;
            }
            paths.push(perm[s..].to_vec());
            let f = score(&paths);
            if f > best.0 {
                best = (f, paths);
            }
            let mut i = cuts.len();
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if cuts[i] < n {
                    cuts[i] += 1;
                    for j in i + 1..cuts.len() {
                        cuts[j] = cuts[i];
                    }
                    i = usize::MAX;
                    break;
                }
            }
            if i != usize::MAX {
                break;
            }
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
