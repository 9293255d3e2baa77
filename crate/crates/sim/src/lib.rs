//! Simulation engine, scenario files, result export and brute-force oracle
//! entry points around `soar-core`.

pub mod engine;
pub mod metrics;
pub mod oracle_cli;
pub mod scenario;
pub mod scene;

pub use engine::{Engine, EngineError, Event};
pub use metrics::{export_results, Metrics};
pub use scenario::{load_scenario, save_scenario, Scenario, ScenarioError};
