use std::collections::BTreeSet;

use soar_sim::metrics::load_metrics;
use soar_sim::scene::BuiltinScene;
use soar_sim::{export_results, Engine, Event, Scenario};

fn box_engine(seed: u64) -> Engine {
    let mut s = Scenario::builtin(BuiltinScene::Box, 2);
    s.seed = seed;
    Engine::new(s).unwrap()
}

#[test]
fn empty_scene_finishes_without_viewpoints() {
    let mut e = Engine::new(Scenario::builtin(BuiltinScene::Empty, 2)).unwrap();
    assert!(e.run());
    let m = e.metrics();
    assert!(m.complete);
    assert_eq!(m.viewpoint_count, 0);
    assert_eq!(m.extracted_points, 0);
}

#[test]
fn box_run_finishes_clean() {
    let mut e = box_engine(3);
    assert!(e.run());
    let m = e.metrics();
    assert!(m.verified_coverage_rate >= 0.95, "{}", m.verified_coverage_rate);
    assert!(m.kinodynamic.clean(), "{:?}", m.kinodynamic);
    assert_eq!(m.visited_viewpoints + m.abandoned_viewpoints, m.viewpoint_count);
    let visits: Vec<u32> = e
        .events()
        .iter()
        .filter_map(|ev| match ev {
            Event::Visit { vp, .. } => Some(*vp),
            _ => None,
        })
        .collect();
    assert_eq!(visits.len(), visits.iter().collect::<BTreeSet<_>>().len());
    assert!(matches!(e.events().last(), Some(Event::Finished { .. })));
}

#[test]
fn same_seed_same_run() {
    let mut a = box_engine(5);
    let mut b = box_engine(5);
    for _ in 0..400 {
        assert_eq!(a.step(), b.step());
    }
    assert_eq!(a.explorer().rows, b.explorer().rows);
    assert_eq!(a.metrics(), b.metrics());
}

#[test]
fn tick_budget_marks_incomplete() {
    let mut s = Scenario::builtin(BuiltinScene::Box, 1);
    s.max_ticks = 50;
    let mut e = Engine::new(s).unwrap();
    assert!(!e.run());
    assert_eq!(e.tick(), 50);
    let m = e.metrics();
    assert!(!m.complete);
    let dir = tempfile::tempdir().unwrap();
    export_results(&e, &m, dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(summary.contains("INCOMPLETE"));
}

#[test]
fn blocked_start_is_refused() {
    let mut s = Scenario::builtin(BuiltinScene::Box, 1);
    s.photographer_starts = vec![soar_core::geom::Vec3::new(10.0, 10.0, 2.0)];
    assert!(Engine::new(s).is_err());
}

#[test]
fn exports_parse_back() {
    let mut s = Scenario::builtin(BuiltinScene::Box, 2);
    s.max_ticks = 300;
    let mut e = Engine::new(s).unwrap();
    e.run();
    let m = e.metrics();
    let dir = tempfile::tempdir().unwrap();
    export_results(&e, &m, dir.path()).unwrap();
    assert_eq!(load_metrics(&dir.path().join("metrics.json")).unwrap(), m);
    for name in ["explorer", "photographer_1", "photographer_2"] {
        let mut r = csv::Reader::from_path(dir.path().join(format!("poses_{name}.csv"))).unwrap();
        let headers = r.headers().unwrap().clone();
        assert_eq!(headers.iter().collect::<Vec<_>>(), ["t", "agent_id", "x", "y", "z", "yaw", "pitch", "v"]);
        assert_eq!(r.records().count() as u64, e.tick());
    }
    let cycles = std::fs::read_to_string(dir.path().join("cycles.jsonl")).unwrap();
    for line in cycles.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["ga_millis"].is_number());
    }
    assert_eq!(cycles.lines().count(), m.cycles.len());
}
