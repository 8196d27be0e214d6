//! Physical and tuning parameters, loaded from a sectioned TOML file.
//!
//! Every field is optional in the file; omitted fields take the flight-tested
//! defaults. Unknown keys are rejected so that typos fail loudly instead of
//! silently falling back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Upper bound of the planar lidar and of every obstacle distance channel [m].
pub const D_MAX: f64 = 15.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(key: &'static str, v: &[f64]) -> Result<(), ConfigError> {
    if v.iter().all(|x| x.is_finite() && *x >= 0.0) {
        Ok(())
    } else {
        Err(invalid(key, format!("weights must be finite and >= 0, got {v:?}")))
    }
}

/// MAV model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Gravity [m/s^2]
    pub g: f64,
    /// Mass-normalized linear drag coefficients [1/s]
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    /// Attitude loop gains
    pub k_phi: f64,
    pub k_theta: f64,
    /// Attitude loop time constants [s]
    pub tau_phi: f64,
    pub tau_theta: f64,
    /// Thrust acceleration at full normalized command [m/s^2]. Hover is `g / t_max`.
    pub t_max: f64,
    /// Yaw-rate lag of the low-level controller [s]. Only the simulator uses it.
    pub tau_psi: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            g: 9.8,
            ax: 0.1,
            ay: 0.1,
            az: 0.2,
            k_phi: 1.0,
            k_theta: 1.0,
            tau_phi: 0.5,
            tau_theta: 0.5,
            t_max: 2.0 * 9.8,
            tau_psi: 0.3,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("model.g", self.g)?;
        positive("model.ax", self.ax)?;
        positive("model.ay", self.ay)?;
        positive("model.az", self.az)?;
        positive("model.k_phi", self.k_phi)?;
        positive("model.k_theta", self.k_theta)?;
        positive("model.tau_phi", self.tau_phi)?;
        positive("model.tau_theta", self.tau_theta)?;
        positive("model.t_max", self.t_max)?;
        positive("model.tau_psi", self.tau_psi)?;
        if self.t_max < self.g {
            return Err(invalid("model.t_max", "must be >= g or the vehicle cannot hover"));
        }
        Ok(())
    }

    /// Normalized thrust command that exactly cancels gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.g / self.t_max
    }
}

/// NMPC cost weights, horizon and safety distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcWeights {
    pub qz: f64,
    pub qv: [f64; 3],
    pub qu: [f64; 3],
    pub qdu: [f64; 3],
    /// Safety distance to every surface [m]
    pub d_s: f64,
    /// Prediction horizon in stages
    pub horizon: usize,
    /// Sampling time [s]
    pub ts: f64,
    /// Bound on |vx_r| and |vy_r| accepted from the operator [m/s]
    pub v_ref_max: f64,
    /// Consecutive degraded solves before the controller falls back to hover references
    pub watchdog_ticks: usize,
}

impl Default for NmpcWeights {
    fn default() -> Self {
        Self {
            qz: 10.0,
            qv: [5.0; 3],
            qu: [20.0; 3],
            qdu: [20.0; 3],
            d_s: 1.0,
            horizon: 40,
            ts: 0.05,
            v_ref_max: 2.0,
            watchdog_ticks: 3,
        }
    }
}

impl NmpcWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        non_negative("nmpc.qz", &[self.qz])?;
        non_negative("nmpc.qv", &self.qv)?;
        non_negative("nmpc.qu", &self.qu)?;
        non_negative("nmpc.qdu", &self.qdu)?;
        positive("nmpc.d_s", self.d_s)?;
        positive("nmpc.ts", self.ts)?;
        positive("nmpc.v_ref_max", self.v_ref_max)?;
        if self.horizon < 2 {
            return Err(invalid(
                "nmpc.horizon",
                format!("horizon must be >= 2, got {}", self.horizon),
            ));
        }
        if self.watchdog_ticks == 0 {
            return Err(invalid("nmpc.watchdog_ticks", "must be >= 1"));
        }
        Ok(())
    }
}

/// PANOC and quadratic-penalty settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Tolerance on the scaled fixed-point residual
    pub tol: f64,
    /// Tolerance on the infinity norm of the constraint residuals
    pub c_tol: f64,
    pub lbfgs_memory: usize,
    pub max_inner_iters: usize,
    pub rho0: f64,
    pub rho_factor: f64,
    pub max_outer: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            c_tol: 1e-3,
            lbfgs_memory: 10,
            max_inner_iters: 500,
            rho0: 10.0,
            rho_factor: 10.0,
            max_outer: 6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("solver.tol", self.tol)?;
        positive("solver.c_tol", self.c_tol)?;
        positive("solver.rho0", self.rho0)?;
        if !(self.rho_factor > 1.0) {
            return Err(invalid("solver.rho_factor", "must be > 1"));
        }
        if self.max_inner_iters == 0 {
            return Err(invalid("solver.max_inner_iters", "must be >= 1"));
        }
        if self.max_outer == 0 {
            return Err(invalid("solver.max_outer", "must be >= 1"));
        }
        Ok(())
    }
}

/// Unit in which the heading filter state and the proportional gain are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    Rad,
    Deg,
}

impl AngleUnit {
    /// Multiplier converting radians into this unit.
    pub fn per_rad(self) -> f64 {
        match self {
            AngleUnit::Rad => 1.0,
            AngleUnit::Deg => 180.0 / std::f64::consts::PI,
        }
    }
}

/// Heading generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadingParams {
    /// Complementary filter coefficient
    pub beta: f64,
    /// Proportional gain from filtered heading to yaw-rate reference
    pub k_p: f64,
    /// Unit of the filtered heading that `k_p` multiplies. The lidar reports one
    /// range per degree and the gain is tuned against angles in degrees.
    pub angle_unit: AngleUnit,
    /// Half width of the scan window around the travel axis [rad]
    pub window_half_width: f64,
    /// Saturation of the yaw-rate reference [rad/s]
    pub max_rate: f64,
}

impl Default for HeadingParams {
    fn default() -> Self {
        Self {
            beta: 0.95,
            k_p: 0.03,
            angle_unit: AngleUnit::Deg,
            window_half_width: std::f64::consts::FRAC_PI_2,
            max_rate: 1.0,
        }
    }
}

impl HeadingParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("heading.beta", format!("must be in (0, 1), got {}", self.beta)));
        }
        positive("heading.k_p", self.k_p)?;
        positive("heading.max_rate", self.max_rate)?;
        if !(self.window_half_width > 0.0 && self.window_half_width <= std::f64::consts::PI) {
            return Err(invalid("heading.window_half_width", "must be in (0, pi]"));
        }
        Ok(())
    }
}

/// Simulator settings: sensor noise, lidar geometry and physics rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Physics integration step [s]
    pub physics_dt: f64,
    pub n_beams: usize,
    pub max_range: f64,
    /// Gaussian sigma on every range return [m]
    pub range_noise: f64,
    /// Gaussian sigma on the z gyro [rad/s]
    pub gyro_noise: f64,
    /// Gaussian sigma on the velocity estimate [m/s]
    pub velocity_noise: f64,
    /// Probability that a beam returns nothing
    pub dropout_prob: f64,
    /// Collision radius of the vehicle [m]
    pub vehicle_radius: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            physics_dt: 0.005,
            n_beams: 360,
            max_range: D_MAX,
            range_noise: 0.02,
            gyro_noise: 0.01,
            velocity_noise: 0.02,
            dropout_prob: 0.0,
            vehicle_radius: 0.3,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("sim.physics_dt", self.physics_dt)?;
        positive("sim.max_range", self.max_range)?;
        positive("sim.vehicle_radius", self.vehicle_radius)?;
        if self.n_beams < 4 {
            return Err(invalid("sim.n_beams", "need at least 4 beams"));
        }
        non_negative("sim.range_noise", &[self.range_noise])?;
        non_negative("sim.gyro_noise", &[self.gyro_noise])?;
        non_negative("sim.velocity_noise", &[self.velocity_noise])?;
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(invalid("sim.dropout_prob", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// The full parameter set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelParams,
    pub nmpc: NmpcWeights,
    pub solver: SolverSettings,
    pub heading: HeadingParams,
    pub sim: SimParams,
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.nmpc.validate()?;
        self.solver.validate()?;
        self.heading.validate()?;
        self.sim.validate()?;
        if self.sim.physics_dt > self.nmpc.ts {
            return Err(invalid("sim.physics_dt", "must not exceed nmpc.ts"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// SHA-256 over the canonical TOML rendering, hex encoded.
    pub fn param_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}
