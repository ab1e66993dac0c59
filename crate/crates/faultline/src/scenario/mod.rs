//! Study orchestration: declarative scenario files, the bundled corridor
//! template, the co-simulation runner, result export, and parameter sweeps.

pub mod config;
pub mod export;
pub mod runner;
pub mod sweep;
pub mod template;

pub use config::{load_scenario, load_sweep, parse_scenario, parse_sweep, Scenario, SweepSpec};
pub use runner::{run_scenario, RunStatus, ScenarioResult};
