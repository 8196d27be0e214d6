//! Wire protocol: one JSON object per line, discriminated by `type`.

use serde::{Deserialize, Serialize};
use tunnelpilot_core::perception::Beam;
use tunnelpilot_core::sim::{Pose, Scenario, Segment, TickRecord};
use tunnelpilot_core::solver::SolverStatus;
use tunnelpilot_core::Config;

/// Beams kept per telemetry frame.
pub const TELEMETRY_BEAMS: usize = 90;

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandMessage {
    SetReference { z_r: f64, vx_r: f64, vy_r: f64 },
    ReturnCommand,
    Pause,
    Resume,
    Reset { scenario: String, seed: u64 },
    ScenarioInfo,
}

impl CommandMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::SetReference { .. } => "set_reference",
            Self::ReturnCommand => "return_command",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::Reset { .. } => "reset",
            Self::ScenarioInfo => "scenario_info",
        }
    }
}

/// Parses one line; the error text is sent back in an error frame.
pub fn parse_command(line: &str) -> Result<CommandMessage, String> {
    serde_json::from_str(line.trim()).map_err(|e| format!("malformed message: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub phi: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub d_xp: f64,
    pub d_xm: f64,
    pub d_yp: f64,
    pub d_ym: f64,
    pub d_zp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub z_r: f64,
    pub vx_r: f64,
    pub vy_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub tick: u64,
    pub t: f64,
    pub pose: Pose,
    pub state: StateSummary,
    /// Distances the controller saw this tick.
    pub distances: Distances,
    pub psi_dot_r: f64,
    pub reference: References,
    pub solve_ms: f64,
    pub status: SolverStatus,
    pub collision: bool,
    pub scan: Vec<Beam>,
}

impl TelemetryFrame {
    pub fn from_tick(r: &TickRecord) -> Self {
        let l = &r.log;
        let d = r.measured.as_array();
        let stride = (r.scan.beams().len() / TELEMETRY_BEAMS).max(1);
        Self {
            tick: r.tick,
            t: l.t,
            pose: Pose {
                x: l.x,
                y: l.y,
                yaw: l.yaw,
            },
            state: StateSummary {
                z: l.z,
                vx: l.vx,
                vy: l.vy,
                vz: l.vz,
                phi: l.phi,
                theta: l.theta,
            },
            distances: Distances {
                d_xp: d[0],
                d_xm: d[1],
                d_yp: d[2],
                d_ym: d[3],
                d_zp: d[4],
            },
            psi_dot_r: l.psi_dot_r,
            reference: References {
                z_r: r.reference.z_r(),
                vx_r: r.reference.vx_r(),
                vy_r: r.reference.vy_r(),
            },
            solve_ms: l.solve_ms.unwrap_or(0.0),
            status: l.status,
            collision: l.collision,
            scan: r.scan.decimated(stride),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub scenario: String,
    pub seed: u64,
    pub walls: Vec<Segment>,
    pub ceiling_height: f64,
    pub spawn: Pose,
    pub safety_distance: f64,
    pub vehicle_radius: f64,
    pub ts: f64,
    pub duration: f64,
}

impl ScenarioInfo {
    pub fn new(scenario: &Scenario, config: &Config, seed: u64) -> Self {
        Self {
            scenario: scenario.name.clone(),
            seed,
            walls: scenario.world.segments().to_vec(),
            ceiling_height: scenario.world.ceiling_height,
            spawn: scenario.world.spawn,
            safety_distance: config.nmpc.d_s,
            vehicle_radius: config.sim.vehicle_radius,
            ts: config.nmpc.ts,
            duration: scenario.duration,
        }
    }
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Telemetry(TelemetryFrame),
    ScenarioInfo(ScenarioInfo),
    Ack { command: String },
    Error { message: String },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages always serialize");
        s.push('\n');
        s
    }
}
