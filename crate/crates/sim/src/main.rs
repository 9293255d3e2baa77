use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use soar_sim::oracle_cli::{self, AtspInstance, MtspInstance};
use soar_sim::{export_results, load_scenario, Engine, ScenarioError};

#[derive(Parser)]
#[command(name = "soar", version, about = "Multi-UAV exploration and coverage simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write results.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Tick budget, overriding the scenario's.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Load and validate a scenario, printing the resolved form.
    Validate { scenario: PathBuf },
    /// Reference solvers.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Exhaustive multi-photographer assignment over a JSON instance.
    MtspExhaustive { instance: PathBuf },
    /// Exhaustive open tour over a JSON cost matrix.
    AtspExhaustive { instance: PathBuf },
    /// Compare incremental and brute-force frontiers along a scenario run.
    FrontierBruteforce {
        scenario: PathBuf,
        #[arg(long, default_value_t = 600)]
        ticks: u64,
    },
}

const EXIT_INVALID: u8 = 2;
const EXIT_BUDGET: u8 = 3;

fn read_json<T: DeserializeOwned>(p: &Path) -> Result<T, String> {
    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
}

fn scenario_or_exit(p: &Path) -> Result<soar_sim::Scenario, ExitCode> {
    load_scenario(p).map_err(|e| {
        eprintln!("{e}");
        match e {
            ScenarioError::Io { .. } => ExitCode::FAILURE,
            _ => ExitCode::from(EXIT_INVALID),
        }
    })
}

fn engine_or_exit(s: soar_sim::Scenario) -> Result<Engine, ExitCode> {
    Engine::new(s).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(EXIT_INVALID)
    })
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            ticks,
        } => {
            let mut s = scenario_or_exit(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(t) = ticks {
                s.max_ticks = t;
            }
            let mut engine = engine_or_exit(s)?;
            let done = engine.run();
            let m = engine.metrics();
            export_results(&engine, &m, &out).map_err(|e| {
                eprintln!("{e}");
                ExitCode::FAILURE
            })?;
            println!(
                "{}: {} viewpoints, coverage {:.1}%, completion {}",
                m.scenario,
                m.viewpoint_count,
                100.0 * m.verified_coverage_rate,
                m.completion_time.map_or("-".into(), |t| format!("{t:.1} s"))
            );
            if done {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("tick budget exhausted; results marked incomplete");
                Ok(ExitCode::from(EXIT_BUDGET))
            }
        }
        Cmd::Validate { scenario } => {
            let s = scenario_or_exit(&scenario)?;
            engine_or_exit(s.clone())?;
            println!("{}", serde_json::to_string_pretty(&s).expect("serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Oracle { which } => {
            let out = match which {
                OracleCmd::MtspExhaustive { instance } => {
                    let inst: MtspInstance = read_json(&instance).map_err(fail)?;
                    serde_json::to_string(&oracle_cli::mtsp(&inst))
                }
                OracleCmd::AtspExhaustive { instance } => {
                    let inst: AtspInstance = read_json(&instance).map_err(fail)?;
                    serde_json::to_string(&oracle_cli::atsp(&inst))
                }
                OracleCmd::FrontierBruteforce { scenario, ticks } => {
                    let mut engine = engine_or_exit(scenario_or_exit(&scenario)?)?;
                    let r = oracle_cli::frontier_check(&mut engine, ticks);
                    let ok = r.mismatches == 0;
                    println!("{}", serde_json::to_string(&r).expect("serializes"));
                    return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
                }
            };
            println!("{}", out.expect("serializes"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn fail(msg: String) -> ExitCode {
    eprintln!("{msg}");
    ExitCode::from(EXIT_INVALID)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) | Err(c) => c,
    }
}
