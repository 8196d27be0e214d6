//! Body-frame MAV model and obstacle-surface kinematics.
//!
//! Translational dynamics use the thrust vector rotated by roll then pitch,
//! gravity and diagonal linear drag. Roll and pitch follow first-order lags
//! towards the commanded angles. Each surface distance moves at minus or plus
//! the matching body velocity component.

use crate::config::ModelParams;
use crate::state::{idx, ControlInput, MavState, INPUT_DIM, STATE_DIM};

/// Time derivative of a [`MavState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative(pub [f64; STATE_DIM]);

/// Sign of each surface-distance rate relative to its velocity component, and
/// which velocity component that is.
pub(crate) const SURFACE_AXES: [(usize, f64); 5] = [
    (idx::VX, -1.0),
    (idx::VX, 1.0),
    (idx::VY, -1.0),
    (idx::VY, 1.0),
    (idx::VZ, -1.0),
];

/// Continuous-time right-hand side on raw arrays.
#[inline]
pub fn rhs(x: &[f64; STATE_DIM], u: &[f64; INPUT_DIM], p: &ModelParams) -> [f64; STATE_DIM] {
    let (sphi, cphi) = x[idx::PHI].sin_cos();
    let (stheta, ctheta) = x[idx::THETA].sin_cos();
    let thrust = u[2] * p.t_max;
    let (vx, vy, vz) = (x[idx::VX], x[idx::VY], x[idx::VZ]);

    let mut dx = [0.0; STATE_DIM];
    dx[idx::Z] = vz;
    dx[idx::VX] = cphi * stheta * thrust - p.ax * vx;
    dx[idx::VY] = -sphi * thrust - p.ay * vy;
    dx[idx::VZ] = cphi * ctheta * thrust - p.g - p.az * vz;
    dx[idx::PHI] = (p.k_phi * u[0] - x[idx::PHI]) / p.tau_phi;
    dx[idx::THETA] = (p.k_theta * u[1] - x[idx::THETA]) / p.tau_theta;
    for (k, (vi, sign)) in SURFACE_AXES.iter().enumerate() {
        dx[idx::D_XP + k] = sign * x[*vi];
    }
    dx
}

pub fn derivative(x: &MavState, u: &ControlInput, p: &ModelParams) -> StateDerivative {
    StateDerivative(rhs(x.as_array(), &u.as_array(), p))
}

/// One explicit Euler step without clamping. This is the prediction model of
/// the controller.
#[inline]
pub fn euler_map(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    ts: f64,
    p: &ModelParams,
) -> [f64; STATE_DIM] {
    let dx = rhs(x, u, p);
    let mut next = *x;
    for (n, d) in next.iter_mut().zip(dx) {
        *n += ts * d;
    }
    next
}

/// Vector-Jacobian products of [`euler_map`]: returns `(dPhi/dx)^T lambda` and
/// `(dPhi/du)^T lambda` evaluated at `(x, u)`.
#[inline]
pub fn euler_vjp(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    ts: f64,
    p: &ModelParams,
    lambda: &[f64; STATE_DIM],
) -> ([f64; STATE_DIM], [f64; INPUT_DIM]) {
    let (sphi, cphi) = x[idx::PHI].sin_cos();
    let (stheta, ctheta) = x[idx::THETA].sin_cos();
    let thrust = u[2] * p.t_max;
    let l = lambda;

    // (df/dx)^T lambda
    let mut jx = [0.0; STATE_DIM];
    jx[idx::VX] = -p.ax * l[idx::VX] - l[idx::D_XP] + l[idx::D_XM];
    jx[idx::VY] = -p.ay * l[idx::VY] - l[idx::D_YP] + l[idx::D_YM];
    jx[idx::VZ] = l[idx::Z] - p.az * l[idx::VZ] - l[idx::D_ZP];
    jx[idx::PHI] = thrust
        * (-sphi * stheta * l[idx::VX] - cphi * l[idx::VY] - sphi * ctheta * l[idx::VZ])
        - l[idx::PHI] / p.tau_phi;
    jx[idx::THETA] =
        thrust * (cphi * ctheta * l[idx::VX] - cphi * stheta * l[idx::VZ]) - l[idx::THETA] / p.tau_theta;

    let mut adj_x = *l;
    for (a, j) in adj_x.iter_mut().zip(jx) {
        *a += ts * j;
    }
    let adj_u = [
        ts * p.k_phi / p.tau_phi * l[idx::PHI],
        ts * p.k_theta / p.tau_theta * l[idx::THETA],
        ts * p.t_max * (cphi * stheta * l[idx::VX] - sphi * l[idx::VY] + cphi * ctheta * l[idx::VZ]),
    ];
    (adj_x, adj_u)
}

/// Euler step followed by clamping of the angles and distances.
pub fn step_euler(x: &MavState, u: &ControlInput, ts: f64, p: &ModelParams) -> MavState {
    debug_assert!(ts > 0.0);
    MavState::clamped(euler_map(x.as_array(), &u.as_array(), ts, p))
}

/// Classical fourth-order Runge-Kutta over one step of the raw right-hand side.
#[inline]
pub fn rk4_map(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    h: f64,
    p: &ModelParams,
) -> [f64; STATE_DIM] {
    let add = |a: &[f64; STATE_DIM], k: &[f64; STATE_DIM], s: f64| {
        let mut out = *a;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += s * ki;
        }
        out
    };
    let k1 = rhs(x, u, p);
    let k2 = rhs(&add(x, &k1, h / 2.0), u, p);
    let k3 = rhs(&add(x, &k2, h / 2.0), u, p);
    let k4 = rhs(&add(x, &k3, h), u, p);
    let mut out = *x;
    for i in 0..STATE_DIM {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// High-accuracy reference integration with `substeps` RK4 steps over `ts`.
/// Only used to bound the Euler model's error.
pub fn step_oracle(
    x: &MavState,
    u: &ControlInput,
    ts: f64,
    p: &ModelParams,
    substeps: usize,
) -> MavState {
    assert!(substeps >= 1, "substeps must be >= 1");
    let h = ts / substeps as f64;
    let ua = u.as_array();
    let mut s = *x.as_array();
    for _ in 0..substeps {
        s = rk4_map(&s, &ua, h, p);
    }
    MavState::clamped(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ObstacleDistances;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn hover_input() -> ControlInput {
        ControlInput::level(params().hover_thrust())
    }

    fn state_with(f: impl FnOnce(&mut [f64; STATE_DIM])) -> MavState {
        let mut a = *MavState::hover(0.0, 5.0).as_array();
        f(&mut a);
        MavState::from_array(a).unwrap()
    }

    #[test]
    fn hover_is_an_exact_equilibrium() {
        let x = MavState::new(0.0, [0.0; 3], 0.0, 0.0, ObstacleDistances::new([3.0, 4.0, 5.0, 6.0, 7.0]).unwrap())
            .unwrap();
        let d = derivative(&x, &hover_input(), &params());
        assert_eq!(d.0, [0.0; STATE_DIM]);
    }

    #[test]
    fn drag_and_surface_rates() {
        let x = state_with(|a| a[idx::VX] = 1.0);
        let d = derivative(&x, &hover_input(), &params()).0;
        assert!((d[idx::VX] + 0.1).abs() < 1e-15);
        assert_eq!(d[idx::D_XP], -1.0);
        assert_eq!(d[idx::D_XM], 1.0);
        assert_eq!(d[idx::D_YP], 0.0);
    }

    #[test]
    fn roll_lag_rate() {
        let x = state_with(|_| {});
        let u = ControlInput::new(0.4, 0.0, 0.5).unwrap();
        let d = derivative(&x, &u, &params()).0;
        assert!((d[idx::PHI] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn euler_steps() {
        let p = params();
        let x = state_with(|_| {});
        assert_eq!(step_euler(&x, &hover_input(), 0.05, &p), x);

        let x = state_with(|a| {
            a[idx::D_XP] = 5.0;
            a[idx::VX] = 1.0;
        });
        let n = step_euler(&x, &hover_input(), 0.05, &p);
        assert!((n[idx::D_XP] - 4.95).abs() < 1e-12);

        let x = state_with(|_| {});
        let n = step_euler(&x, &ControlInput::new(0.4, 0.0, 0.5).unwrap(), 0.05, &p);
        assert!((n.phi() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn euler_clamps_distance_at_zero() {
        let p = params();
        let x = state_with(|a| {
            a[idx::D_XP] = 0.01;
            a[idx::VX] = 1.0;
        });
        let n = step_euler(&x, &hover_input(), 0.05, &p);
        assert_eq!(n[idx::D_XP], 0.0);
    }

    #[test]
    fn oracle_matches_euler_at_hover() {
        let p = params();
        let x = state_with(|_| {});
        assert_eq!(step_oracle(&x, &hover_input(), 0.05, &p, 7), step_euler(&x, &hover_input(), 0.05, &p));
    }

    #[test]
    fn oracle_is_self_consistent_in_linear_regime() {
        // Level attitude held at its command: the remaining dynamics are linear
        // with small coefficients, so coarse and fine RK4 agree closely.
        let p = params();
        let x = state_with(|a| {
            a[idx::VX] = 0.7;
            a[idx::VY] = -0.3;
            a[idx::VZ] = 0.2;
            a[idx::Z] = 1.2;
        });
        let a = step_oracle(&x, &hover_input(), 0.05, &p, 1);
        let b = step_oracle(&x, &hover_input(), 0.05, &p, 100);
        for i in 0..STATE_DIM {
            assert!((a[i] - b[i]).abs() < 1e-6, "entry {i}: {} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let p = params();
        let x = [1.1, 0.3, -0.2, 0.1, 0.15, -0.25, 3.0, 4.0, 2.0, 1.5, 2.5];
        let u = [0.2, -0.3, 0.6];
        let lambda = [0.3, -1.0, 0.5, 2.0, -0.7, 0.4, 1.0, -2.0, 0.25, 0.6, -0.9];
        let (ax, au) = euler_vjp(&x, &u, 0.05, &p, &lambda);
        let dot = |a: &[f64; STATE_DIM]| a.iter().zip(&lambda).map(|(x, l)| x * l).sum::<f64>();
        let h = 1e-6;
        for i in 0..STATE_DIM {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (dot(&euler_map(&xp, &u, 0.05, &p)) - dot(&euler_map(&xm, &u, 0.05, &p))) / (2.0 * h);
            assert!((fd - ax[i]).abs() < 1e-7, "x[{i}]: {fd} vs {}", ax[i]);
        }
        for i in 0..INPUT_DIM {
            let (mut up, mut um) = (u, u);
            up[i] += h;
            um[i] -= h;
            let fd = (dot(&euler_map(&x, &up, 0.05, &p)) - dot(&euler_map(&x, &um, 0.05, &p))) / (2.0 * h);
            assert!((fd - au[i]).abs() < 1e-7, "u[{i}]: {fd} vs {}", au[i]);
        }
    }
}
