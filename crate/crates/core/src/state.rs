//! Domain types shared by the controller, the perception pipeline and the simulator.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::D_MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{field} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

fn check_range(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), MeasurementError> {
    if !value.is_finite() {
        return Err(MeasurementError::NonFinite(field));
    }
    if value < lo || value > hi {
        return Err(MeasurementError::OutOfRange { field, value, lo, hi });
    }
    Ok(())
}

/// Index of each entry in the 11-dimensional NMPC state.
pub mod idx {
    pub const Z: usize = 0;
    pub const VX: usize = 1;
    pub const VY: usize = 2;
    pub const VZ: usize = 3;
    pub const PHI: usize = 4;
    pub const THETA: usize = 5;
    pub const D_XP: usize = 6;
    pub const D_XM: usize = 7;
    pub const D_YP: usize = 8;
    pub const D_YM: usize = 9;
    pub const D_ZP: usize = 10;
}

pub const STATE_DIM: usize = 11;
pub const INPUT_DIM: usize = 3;

/// `[z, vx, vy, vz, phi, theta, d_xp, d_xm, d_yp, d_ym, d_zp]`, velocities in the
/// heading-aligned body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MavState([f64; STATE_DIM]);

impl MavState {
    pub fn new(
        z: f64,
        velocity: [f64; 3],
        phi: f64,
        theta: f64,
        distances: ObstacleDistances,
    ) -> Result<Self, MeasurementError> {
        let d = distances.as_array();
        Self::from_array([
            z,
            velocity[0],
            velocity[1],
            velocity[2],
            phi,
            theta,
            d[0],
            d[1],
            d[2],
            d[3],
            d[4],
        ])
    }

    /// Hovering at `z` with all surfaces at `d`.
    pub fn hover(z: f64, d: f64) -> Self {
        Self::clamped([z, 0.0, 0.0, 0.0, 0.0, 0.0, d, d, d, d, d])
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Result<Self, MeasurementError> {
        const NAMES: [&str; STATE_DIM] = [
            "z", "vx", "vy", "vz", "phi", "theta", "d_xp", "d_xm", "d_yp", "d_ym", "d_zp",
        ];
        for (v, name) in a.iter().zip(NAMES) {
            if !v.is_finite() {
                return Err(MeasurementError::NonFinite(name));
            }
        }
        check_range("phi", a[idx::PHI], -FRAC_PI_2, FRAC_PI_2)?;
        check_range("theta", a[idx::THETA], -FRAC_PI_2, FRAC_PI_2)?;
        for i in idx::D_XP..=idx::D_ZP {
            check_range(NAMES[i], a[i], 0.0, D_MAX)?;
        }
        Ok(Self(a))
    }

    /// Clamps angles to [-pi/2, pi/2] and distances to [0, D_MAX].
    ///
    /// Non-finite entries are a programming error upstream and panic.
    pub fn clamped(mut a: [f64; STATE_DIM]) -> Self {
        assert!(a.iter().all(|v| v.is_finite()), "non-finite state {a:?}");
        a[idx::PHI] = a[idx::PHI].clamp(-FRAC_PI_2, FRAC_PI_2);
        a[idx::THETA] = a[idx::THETA].clamp(-FRAC_PI_2, FRAC_PI_2);
        for v in &mut a[idx::D_XP..=idx::D_ZP] {
            *v = v.clamp(0.0, D_MAX);
        }
        Self(a)
    }

    pub fn as_array(&self) -> &[f64; STATE_DIM] {
        &self.0
    }

    pub fn z(&self) -> f64 {
        self.0[idx::Z]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.0[idx::VX], self.0[idx::VY], self.0[idx::VZ]]
    }

    pub fn phi(&self) -> f64 {
        self.0[idx::PHI]
    }

    pub fn theta(&self) -> f64 {
        self.0[idx::THETA]
    }

    pub fn distances(&self) -> [f64; 5] {
        let mut d = [0.0; 5];
        d.copy_from_slice(&self.0[idx::D_XP..=idx::D_ZP]);
        d
    }
}

impl std::ops::Index<usize> for MavState {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Attitude and thrust command, `[phi_d, theta_d, t]` with `t` normalized to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    phi_d: f64,
    theta_d: f64,
    thrust: f64,
}

impl ControlInput {
    pub const ANGLE_MAX: f64 = 0.4;
    pub const LOWER: [f64; INPUT_DIM] = [-Self::ANGLE_MAX, -Self::ANGLE_MAX, 0.0];
    pub const UPPER: [f64; INPUT_DIM] = [Self::ANGLE_MAX, Self::ANGLE_MAX, 1.0];

    pub fn new(phi_d: f64, theta_d: f64, thrust: f64) -> Result<Self, MeasurementError> {
        check_range("phi_d", phi_d, Self::LOWER[0], Self::UPPER[0])?;
        check_range("theta_d", theta_d, Self::LOWER[1], Self::UPPER[1])?;
        check_range("thrust", thrust, Self::LOWER[2], Self::UPPER[2])?;
        Ok(Self {
            phi_d,
            theta_d,
            thrust,
        })
    }

    /// Level attitude at the given normalized thrust.
    pub fn level(thrust: f64) -> Self {
        Self::saturating([0.0, 0.0, thrust])
    }

    /// Projects onto the input box. NaN maps to the lower bound.
    pub fn saturating(u: [f64; INPUT_DIM]) -> Self {
        let p = |i: usize| {
            let v = if u[i].is_nan() { Self::LOWER[i] } else { u[i] };
            v.clamp(Self::LOWER[i], Self::UPPER[i])
        };
        Self {
            phi_d: p(0),
            theta_d: p(1),
            thrust: p(2),
        }
    }

    pub fn phi_d(&self) -> f64 {
        self.phi_d
    }

    pub fn theta_d(&self) -> f64 {
        self.theta_d
    }

    pub fn thrust(&self) -> f64 {
        self.thrust
    }

    pub fn as_array(&self) -> [f64; INPUT_DIM] {
        [self.phi_d, self.theta_d, self.thrust]
    }
}

/// Operator reference: altitude and planar body-frame velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCommand {
    z_r: f64,
    vx_r: f64,
    vy_r: f64,
    timestamp: f64,
}

impl ReferenceCommand {
    pub fn new(
        z_r: f64,
        vx_r: f64,
        vy_r: f64,
        timestamp: f64,
        v_ref_max: f64,
    ) -> Result<Self, MeasurementError> {
        if !z_r.is_finite() {
            return Err(MeasurementError::NonFinite("z_r"));
        }
        if !timestamp.is_finite() {
            return Err(MeasurementError::NonFinite("timestamp"));
        }
        check_range("vx_r", vx_r, -v_ref_max, v_ref_max)?;
        check_range("vy_r", vy_r, -v_ref_max, v_ref_max)?;
        Ok(Self {
            z_r,
            vx_r,
            vy_r,
            timestamp,
        })
    }

    pub fn z_r(&self) -> f64 {
        self.z_r
    }

    pub fn vx_r(&self) -> f64 {
        self.vx_r
    }

    pub fn vy_r(&self) -> f64 {
        self.vy_r
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    /// Same altitude, zero planar velocity.
    pub fn hold(&self) -> Self {
        Self {
            vx_r: 0.0,
            vy_r: 0.0,
            ..*self
        }
    }

    /// Reversed longitudinal velocity, as sent by the operator's return command.
    pub fn reversed(&self, timestamp: f64) -> Self {
        Self {
            vx_r: -self.vx_r,
            timestamp,
            ..*self
        }
    }

    pub fn at(&self, timestamp: f64) -> Self {
        Self { timestamp, ..*self }
    }
}

/// Estimated `[z, vx, vy, vz, phi, theta]` delivered by the state estimator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateEstimate {
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub phi: f64,
    pub theta: f64,
}

impl StateEstimate {
    pub fn as_array(&self) -> [f64; 6] {
        [self.z, self.vx, self.vy, self.vz, self.phi, self.theta]
    }
}

/// Distances to the five surfaces `[x+, x-, y+, y-, z+]`, each in (0, D_MAX].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleDistances([f64; 5]);

impl ObstacleDistances {
    pub const NAMES: [&'static str; 5] = ["d_xp", "d_xm", "d_yp", "d_ym", "d_zp"];

    pub fn new(d: [f64; 5]) -> Result<Self, MeasurementError> {
        for (v, name) in d.iter().zip(Self::NAMES) {
            check_range(name, *v, 0.0, D_MAX)?;
            if *v == 0.0 {
                return Err(MeasurementError::OutOfRange {
                    field: name,
                    value: 0.0,
                    lo: f64::MIN_POSITIVE,
                    hi: D_MAX,
                });
            }
        }
        Ok(Self(d))
    }

    /// Every surface beyond lidar range.
    pub fn open() -> Self {
        Self([D_MAX; 5])
    }

    /// Maps each channel into (0, D_MAX]. Missing (None, NaN or infinite) readings
    /// mean nothing was seen within range and become D_MAX.
    pub fn from_readings(d: [Option<f64>; 5]) -> Self {
        Self(d.map(|r| match r {
            Some(v) if v.is_finite() => v.clamp(1e-6, D_MAX),
            _ => D_MAX,
        }))
    }

    pub fn as_array(&self) -> [f64; 5] {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_box_is_enforced() {
        assert!(ControlInput::new(0.4, -0.4, 1.0).is_ok());
        assert!(ControlInput::new(0.41, 0.0, 0.5).is_err());
        assert!(ControlInput::new(0.0, 0.0, -0.01).is_err());
        assert!(ControlInput::new(f64::NAN, 0.0, 0.5).is_err());
        let u = ControlInput::saturating([1.0, -1.0, 2.0]);
        assert_eq!(u.as_array(), [0.4, -0.4, 1.0]);
    }

    #[test]
    fn state_rejects_out_of_range_attitude() {
        let mut a = *MavState::hover(1.0, 5.0).as_array();
        a[idx::PHI] = 2.0;
        assert!(MavState::from_array(a).is_err());
        let s = MavState::clamped(a);
        assert_eq!(s.phi(), FRAC_PI_2);
    }

    #[test]
    fn distances_clamp_on_construction() {
        let mut a = *MavState::hover(1.0, 5.0).as_array();
        a[idx::D_XP] = -0.5;
        a[idx::D_YM] = 40.0;
        let s = MavState::clamped(a);
        assert_eq!(s[idx::D_XP], 0.0);
        assert_eq!(s[idx::D_YM], D_MAX);
    }

    #[test]
    fn missing_readings_are_max_range() {
        let d = ObstacleDistances::from_readings([Some(2.0), None, Some(f64::INFINITY), Some(30.0), Some(1.0)]);
        assert_eq!(d.as_array(), [2.0, D_MAX, D_MAX, D_MAX, 1.0]);
    }

    #[test]
    fn reference_bounds() {
        assert!(ReferenceCommand::new(1.0, 2.5, 0.0, 0.0, 2.0).is_err());
        let r = ReferenceCommand::new(1.0, 0.5, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(r.reversed(3.0).vx_r(), -0.5);
        assert_eq!(r.hold().vx_r(), 0.0);
        assert_eq!(r.hold().z_r(), 1.0);
    }
}
