//! JSON front ends for the exhaustive and brute-force reference solvers.

use serde::{Deserialize, Serialize};

use soar_core::assign::{fitness, AssignParams, CostModel, Individual, VctId};
use soar_core::oracle::{brute_force_frontiers, exhaustive_atsp, exhaustive_mdmtsp};
use soar_core::routes::AtspMatrix;

use crate::engine::Engine;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtspInstance {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub end: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtspAnswer {
    pub cost: f64,
    pub order: Vec<usize>,
}

pub fn atsp(inst: &AtspInstance) -> AtspAnswer {
    let n = inst.matrix.len();
    let m = AtspMatrix::from_fn(n, |i, j| inst.matrix[i][j]);
    let (cost, order) = exhaustive_atsp(&m, inst.end);
    AtspAnswer { cost, order }
}

/// Photographer-to-task costs `c_d` (one row per photographer) and
/// task-to-task costs `c_vct`; `prev` holds earlier paths as task indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtspInstance {
    pub c_d: Vec<Vec<f64>>,
    pub c_vct: Vec<Vec<f64>>,
    #[serde(default)]
    pub prev: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub params: AssignParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtspAnswer {
    pub fitness: f64,
    pub paths: Vec<Vec<usize>>,
}

pub fn mtsp(inst: &MtspInstance) -> MtspAnswer {
    let ids = (0..inst.c_vct.len() as u32).map(VctId).collect();
    let model = CostModel::from_matrices(ids, inst.c_d.clone(), inst.c_vct.clone(), &inst.params);
    let (f, paths) = exhaustive_mdmtsp(&model, inst.prev.as_deref());
    debug_assert!({
        let prev = inst.prev.clone().map(|paths| Individual { paths });
        (fitness(&Individual { paths: paths.clone() }, prev.as_ref(), &model) - f).abs() < 1e-9
    });
    MtspAnswer { fitness: f, paths }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub ticks: u64,
    pub checks: usize,
    pub mismatches: usize,
    pub final_cells: usize,
}

/// Runs the engine for up to `ticks`, comparing the incremental frontier
/// with a full-grid evaluation after every planning cycle.
pub fn frontier_check(engine: &mut Engine, ticks: u64) -> FrontierReport {
    let per = engine.scenario.ticks_per_cycle();
    let mut r = FrontierReport {
        ticks: 0,
        checks: 0,
        mismatches: 0,
        final_cells: 0,
    };
    while engine.tick() < ticks && !engine.is_finished() {
        let planning = engine.tick().is_multiple_of(per);
        engine.step();
        if planning {
            r.checks += 1;
            if brute_force_frontiers(engine.grid()) != *engine.frontier().cells() {
                r.mismatches += 1;
            }
        }
    }
    r.ticks = engine.tick();
    r.final_cells = engine.frontier().cells().len();
    r
}
