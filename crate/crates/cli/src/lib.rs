//! Command-line front end: batch runs, reports, the benchmark and the live
//! telemetry server.

pub mod bench;
pub mod protocol;
pub mod report;
pub mod service;

use std::path::Path;

use tunnelpilot_core::sim::{builtin_scenario, NoiseConfig, Scenario, BUILTIN_NAMES};
use tunnelpilot_core::Config;

/// Failures that map to dedicated exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown scenario {0:?} (built-in: {names})", names = BUILTIN_NAMES.join(", "))]
    UnknownScenario(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::UnknownScenario(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

/// A built-in scenario name or a path to a scenario TOML file. Built-ins take
/// their noise levels from the config.
pub fn resolve_scenario(spec: &str, config: &Config) -> anyhow::Result<Scenario> {
    if let Ok(mut s) = builtin_scenario(spec) {
        s.noise = NoiseConfig::from(&config.sim);
        return Ok(s);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::UnknownScenario(spec.to_string()).into());
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {spec}: {e}")))?;
    Ok(Scenario::from_toml(&text)?)
}
