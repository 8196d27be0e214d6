use serde::{Deserialize, Serialize};

use super::world::{Point, Pose, TunnelWorld};
use super::SimError;
use crate::config::SimParams;

/// Reference that takes effect at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledReference {
    pub t: f64,
    pub z_r: f64,
    pub vx_r: f64,
    #[serde(default)]
    pub vy_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioEvent {
    /// Operator return command: negates the current longitudinal reference.
    Return { t: f64 },
}

impl ScenarioEvent {
    pub fn time(&self) -> f64 {
        match self {
            Self::Return { t } => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub range: f64,
    pub gyro: f64,
    pub velocity: f64,
    pub dropout: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::from(&SimParams::default())
    }
}

impl From<&SimParams> for NoiseConfig {
    fn from(p: &SimParams) -> Self {
        Self {
            range: p.range_noise,
            gyro: p.gyro_noise,
            velocity: p.velocity_noise,
            dropout: p.dropout_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub world: TunnelWorld,
    /// Starting altitude [m].
    #[serde(default = "default_altitude")]
    pub altitude: f64,
    pub schedule: Vec<ScheduledReference>,
    pub duration: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

fn default_altitude() -> f64 {
    1.0
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(format!("{}: {m}", self.name)));
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad("duration must be >= 0");
        }
        if self.schedule.is_empty() || self.schedule[0].t > 0.0 {
            return bad("schedule must start at t = 0");
        }
        if self.schedule.windows(2).any(|w| w[1].t <= w[0].t) {
            return bad("schedule timestamps must increase");
        }
        if self.events.windows(2).any(|w| w[1].time() < w[0].time()) {
            return bad("events must be ordered by time");
        }
        let n = &self.noise;
        if [n.range, n.gyro, n.velocity].iter().any(|s| !(*s >= 0.0)) || !(0.0..=1.0).contains(&n.dropout) {
            return bad("noise sigmas must be >= 0 and dropout in [0, 1]");
        }
        if !(self.altitude > 0.0 && self.altitude < self.world.ceiling_height) {
            return bad("altitude must be between floor and ceiling");
        }
        Ok(())
    }

    /// Reads a scenario from TOML and rebuilds the world geometry.
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.world.finish()?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }
}

fn refs(z_r: f64, vx_r: f64, vy_r: f64) -> Vec<ScheduledReference> {
    vec![ScheduledReference { t: 0.0, z_r, vx_r, vy_r }]
}

/// 6 m wide, 4 m high, 40 m long, closed at both ends.
pub fn straight_tunnel() -> Scenario {
    Scenario {
        name: "straight_tunnel".into(),
        world: TunnelWorld::corridor(6.0, 40.0, 4.0, 12.0).expect("valid geometry"),
        altitude: 1.0,
        schedule: refs(1.0, 0.5, 0.0),
        duration: 60.0,
        noise: NoiseConfig::default(),
        events: Vec::new(),
    }
}

/// 3.5 x 3 m cross-section with a left bend followed by a right bend.
pub fn s_tunnel() -> Scenario {
    const H: f64 = 1.75;
    const BEND1_X: f64 = 8.0;
    const BEND2_Y: f64 = 8.0;
    const END_X: f64 = 60.0;
    let outline: Vec<Point> = vec![
        [0.0, -H],
        [BEND1_X + H, -H],
        [BEND1_X + H, BEND2_Y - H],
        [END_X, BEND2_Y - H],
        [END_X, BEND2_Y + H],
        [BEND1_X - H, BEND2_Y + H],
        [BEND1_X - H, H],
        [0.0, H],
    ];
    let centerline = vec![[0.0, 0.0], [BEND1_X, 0.0], [BEND1_X, BEND2_Y], [END_X, BEND2_Y]];
    let world = TunnelWorld::new(
        outline,
        Vec::new(),
        3.0,
        Pose {
            x: 2.0,
            y: 0.0,
            yaw: 0.0,
        },
        centerline,
    )
    .expect("valid geometry");
    Scenario {
        name: "s_tunnel".into(),
        world,
        altitude: 1.0,
        schedule: refs(1.0, 1.2, 0.0),
        duration: 60.0,
        noise: NoiseConfig::default(),
        events: Vec::new(),
    }
}

/// The straight tunnel cross-section with a plate closing 60% of the width
/// from the left. The operator sends a return command once the vehicle is past
/// the plate and a hover command once it is back at the tunnel end.
pub fn blockage() -> Scenario {
    const PLATE_X: f64 = 10.0;
    const PLATE_T: f64 = 0.5;
    let mut world = TunnelWorld::corridor(6.0, 30.0, 4.0, 2.0).expect("valid geometry");
    let gap_edge = 3.0 - 0.6 * 6.0;
    world.obstacles.push(vec![
        [PLATE_X, gap_edge],
        [PLATE_X + PLATE_T, gap_edge],
        [PLATE_X + PLATE_T, 3.0],
        [PLATE_X, 3.0],
    ]);
    world.finish().expect("valid geometry");
    Scenario {
        name: "blockage".into(),
        world,
        altitude: 1.0,
        schedule: vec![
            ScheduledReference {
                t: 0.0,
                z_r: 1.0,
                vx_r: 0.5,
                vy_r: 0.0,
            },
            ScheduledReference {
                t: 126.0,
                z_r: 1.0,
                vx_r: 0.0,
                vy_r: 0.0,
            },
        ],
        duration: 140.0,
        noise: NoiseConfig::default(),
        events: vec![ScenarioEvent::Return { t: 60.0 }],
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["straight_tunnel", "s_tunnel", "blockage"];

pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![straight_tunnel(), s_tunnel(), blockage()]
}

pub fn builtin_scenario(name: &str) -> Result<Scenario, SimError> {
    match name {
        "straight_tunnel" => Ok(straight_tunnel()),
        "s_tunnel" => Ok(s_tunnel()),
        "blockage" => Ok(blockage()),
        other => Err(SimError::UnknownScenario(other.to_string())),
    }
}
