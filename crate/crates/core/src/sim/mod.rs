//! Ray-cast tunnel simulator and closed-loop runner.

mod log;
mod runner;
mod scenario;
mod vehicle;
mod world;

use thiserror::Error;

pub use log::{load_log, read_records, sidecar_path, LogError, LogRecord, RunLog, RunMeta, Timing, CSV_HEADER};
pub use runner::{run_scenario, run_with_commands, ClosedLoop, SimCommand, SimFault, TickRecord};
pub use scenario::{
    blockage, builtin_scenario, builtin_scenarios, s_tunnel, straight_tunnel, NoiseConfig, Scenario, ScenarioEvent,
    ScheduledReference, BUILTIN_NAMES,
};
pub use vehicle::{vehicle_step, Plant, SimVehicle};
pub use world::{cast_ray, raycast, Point, Pose, Segment, TunnelWorld};

use crate::perception::ScanError;
use crate::state::MeasurementError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("vehicle left the world at ({x:.3}, {y:.3})")]
    OutsideWorld { x: f64, y: f64 },
    #[error("scan: {0}")]
    Scan(#[from] ScanError),
    #[error("measurement: {0}")]
    Measurement(#[from] MeasurementError),
}
