//! Simulated airframe: the attitude-first translational model plus a lagged yaw
//! channel and planar world pose.

use serde::{Deserialize, Serialize};

use super::world::{raycast, Pose, TunnelWorld};
use super::SimError;
use crate::config::{ModelParams, SimParams};
use crate::dynamics::rhs;
use crate::perception::sector_distances;
use crate::state::{idx, ControlInput, MavState, ObstacleDistances, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimVehicle {
    pub pose: Pose,
    /// True state; the distance components are noiseless sector distances.
    pub state: MavState,
    pub yaw_rate: f64,
    /// Contact with a wall, the floor or the ceiling during the last step.
    pub collision: bool,
}

impl SimVehicle {
    pub fn hover_at(pose: Pose, z: f64) -> Self {
        Self {
            pose,
            state: MavState::hover(z, crate::config::D_MAX),
            yaw_rate: 0.0,
            collision: false,
        }
    }
}

/// `[z, vx, vy, vz, phi, theta, yaw_rate, x, y, yaw]`
type PlantState = [f64; 10];

fn plant_rhs(s: &PlantState, u: &[f64; 3], psi_dot_r: f64, p: &ModelParams) -> PlantState {
    let mut x = [crate::config::D_MAX; STATE_DIM];
    x[..6].copy_from_slice(&s[..6]);
    let f = rhs(&x, u, p);
    let (vx, vy, r, yaw) = (s[1], s[2], s[6], s[9]);
    let (sy, cy) = yaw.sin_cos();
    [
        f[idx::Z],
        f[idx::VX] + r * vy,
        f[idx::VY] - r * vx,
        f[idx::VZ],
        f[idx::PHI],
        f[idx::THETA],
        (psi_dot_r - r) / p.tau_psi,
        vx * cy - vy * sy,
        vx * sy + vy * cy,
        r,
    ]
}

fn rk4(s: &PlantState, u: &[f64; 3], psi_dot_r: f64, h: f64, p: &ModelParams) -> PlantState {
    let add = |a: &PlantState, k: &PlantState, c: f64| {
        let mut o = *a;
        o.iter_mut().zip(k).for_each(|(o, k)| *o += c * k);
        o
    };
    let k1 = plant_rhs(s, u, psi_dot_r, p);
    let k2 = plant_rhs(&add(s, &k1, h / 2.0), u, psi_dot_r, p);
    let k3 = plant_rhs(&add(s, &k2, h / 2.0), u, psi_dot_r, p);
    let k4 = plant_rhs(&add(s, &k3, h), u, psi_dot_r, p);
    let mut o = *s;
    for i in 0..o.len() {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// The physical environment the vehicle flies in.
#[derive(Debug, Clone)]
pub struct Plant<'w> {
    pub world: &'w TunnelWorld,
    pub model: ModelParams,
    pub sim: SimParams,
}

impl Plant<'_> {
    /// Nearest-surface clearance including floor and ceiling.
    pub fn clearance(&self, x: f64, y: f64, z: f64) -> f64 {
        self.world
            .wall_distance(x, y)
            .min(z)
            .min(self.world.ceiling_height - z)
    }

    /// Noiseless sector distances at the given pose and altitude.
    pub fn true_distances(&self, pose: &Pose, z: f64) -> Result<ObstacleDistances, SimError> {
        let scan = raycast(self.world, pose, self.sim.n_beams, self.sim.max_range)?;
        Ok(sector_distances(&scan, self.world.ceiling_height - z))
    }

    /// Holds `u` and the yaw-rate reference for `dt`, integrating with RK4 at
    /// the physics step.
    pub fn step(&self, v: &SimVehicle, u: &ControlInput, psi_dot_r: f64, dt: f64) -> Result<SimVehicle, SimError> {
        assert!(dt > 0.0, "dt must be > 0");
        let n = (dt / self.sim.physics_dt - 1e-9).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let ua = u.as_array();
        let x = v.state.as_array();
        let mut s: PlantState = [
            x[0], x[1], x[2], x[3], x[4], x[5], v.yaw_rate, v.pose.x, v.pose.y, v.pose.yaw,
        ];
        let mut collision = false;
        for _ in 0..n {
            s = rk4(&s, &ua, psi_dot_r, h, &self.model);
            if s[0] < 0.0 {
                s[0] = 0.0;
                s[3] = s[3].max(0.0);
            }
            if !self.world.contains(s[7], s[8]) {
                return Err(SimError::OutsideWorld { x: s[7], y: s[8] });
            }
            collision |= self.clearance(s[7], s[8], s[0]) <= self.sim.vehicle_radius;
        }
        let pose = Pose {
            x: s[7],
            y: s[8],
            yaw: crate::perception::wrap_angle(s[9]),
        };
        let d = self.true_distances(&pose, s[0])?;
        let state = MavState::new(s[0], [s[1], s[2], s[3]], s[4], s[5], d)?;
        Ok(SimVehicle {
            pose,
            state,
            yaw_rate: s[6],
            collision,
        })
    }
}

/// Advances `v` by `dt` under input `u` and yaw-rate reference `psi_dot_r`.
pub fn vehicle_step(
    plant: &Plant<'_>,
    v: &SimVehicle,
    u: &ControlInput,
    psi_dot_r: f64,
    dt: f64,
) -> Result<SimVehicle, SimError> {
    plant.step(v, u, psi_dot_r, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant(world: &TunnelWorld) -> Plant<'_> {
        Plant {
            world,
            model: ModelParams::default(),
            sim: SimParams::default(),
        }
    }

    #[test]
    fn hover_keeps_pose() {
        let w = TunnelWorld::corridor(6.0, 40.0, 4.0, 5.0).unwrap();
        let p = plant(&w);
        let v = SimVehicle::hover_at(w.spawn, 1.0);
        let next = p.step(&v, &ControlInput::level(0.5), 0.0, 1.0).unwrap();
        assert_eq!(next.pose, v.pose);
        assert_eq!(next.state.z(), 1.0);
        assert!(!next.collision);
    }

    #[test]
    fn near_wall_collides() {
        let w = TunnelWorld::corridor(6.0, 40.0, 4.0, 5.0).unwrap();
        let p = plant(&w);
        let mut v = SimVehicle::hover_at(w.spawn, 1.0);
        v.pose.y = 2.75;
        let next = p.step(&v, &ControlInput::level(0.5), 0.0, 0.05).unwrap();
        assert!(next.collision);
    }
}
