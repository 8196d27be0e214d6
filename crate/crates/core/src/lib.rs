//! Navigation core for a micro aerial vehicle flying through tunnels: a
//! penalty-constrained PANOC NMPC on a floating-object model, lidar sector
//! distances and heading correction, and a ray-cast tunnel simulator.

pub mod config;
pub mod dynamics;
pub mod nmpc;
pub mod perception;
pub mod sim;
pub mod solver;
pub mod state;

pub use config::{load_config, parse_config, Config, ConfigError};
pub use nmpc::{control_step, ControlStep, NmpcContext, NmpcController};
pub use state::{ControlInput, MavState, MeasurementError, ObstacleDistances, ReferenceCommand, StateEstimate};
