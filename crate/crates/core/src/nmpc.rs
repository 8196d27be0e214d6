//! Finite-horizon optimal control with surface-distance constraints.
//!
//! The state sequence is eliminated by rolling the Euler model forward from the
//! current state, so the only decision variables are the `N` stacked inputs.
//! Each collision constraint `d_s - d_j - ddot_{j+1} * Ts <= 0` is written as
//! the equality `max{0, .} = 0` and handled by the quadratic-penalty loop.
//! Cost and penalty gradients come from one backward adjoint sweep.

use std::cell::RefCell;

use crate::config::{ModelParams, NmpcWeights, SolverSettings, D_MAX};
use crate::dynamics::{euler_map, euler_vjp, SURFACE_AXES};
use crate::solver::{BoxConstraints, ConstrainedProblem, NlpSolution, PenaltySolver, PenaltyWork, Problem, SolverStatus};
use crate::state::{
    idx, ControlInput, MavState, MeasurementError, ObstacleDistances, ReferenceCommand, StateEstimate, INPUT_DIM,
    STATE_DIM,
};

/// Builds the 11-entry state from the estimator output and the five measured
/// distances. Infinite or NaN distances mean "nothing within range" and become
/// `D_MAX`; finite ones are clamped into `[0, D_MAX]`.
pub fn assemble_state(estimate: &StateEstimate, distances: [f64; 5]) -> Result<MavState, MeasurementError> {
    let e = estimate.as_array();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(MeasurementError::NonFinite("state estimate"));
    }
    let d = distances.map(|v| if v.is_finite() { v.clamp(0.0, D_MAX) } else { D_MAX });
    MavState::from_array([e[0], e[1], e[2], e[3], e[4], e[5], d[0], d[1], d[2], d[3], d[4]])
}

/// Everything the controller needs at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct NmpcContext {
    pub weights: NmpcWeights,
    pub model: ModelParams,
    /// Input applied during the previous interval.
    pub previous_input: ControlInput,
    /// Initial guess for the next solve, `horizon` entries.
    pub warm_start: Vec<ControlInput>,
    pub reference: ReferenceCommand,
    pub distances: ObstacleDistances,
    pub estimate: StateEstimate,
}

impl NmpcContext {
    /// First-tick context: previous input and warm start at hover, surfaces out of range.
    pub fn new(weights: NmpcWeights, model: ModelParams, reference: ReferenceCommand) -> Self {
        let hover = ControlInput::level(model.hover_thrust());
        Self {
            warm_start: vec![hover; weights.horizon],
            previous_input: hover,
            reference,
            distances: ObstacleDistances::open(),
            estimate: StateEstimate {
                z: reference.z_r(),
                ..Default::default()
            },
            weights,
            model,
        }
    }

    pub fn hover_input(&self) -> ControlInput {
        ControlInput::level(self.model.hover_thrust())
    }

    pub fn state(&self) -> Result<MavState, MeasurementError> {
        assemble_state(&self.estimate, self.distances.as_array())
    }
}

/// States predicted over the horizon under one input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrajectory {
    /// `horizon + 1` states; entry 0 is the current state. Entries are clamped
    /// to the state invariants; the rollout itself is unclamped.
    pub states: Vec<MavState>,
}

#[derive(Debug, Default)]
struct Scratch {
    traj: Vec<[f64; STATE_DIM]>,
    /// Unclipped constraint arguments `d_s - d_j - ddot_{j+1} Ts`, stage-major.
    args: Vec<f64>,
    mult: Vec<f64>,
}

/// The single-shooting problem for one sampling instant.
pub struct OcpProblem {
    weights: NmpcWeights,
    model: ModelParams,
    bounds: BoxConstraints,
    x0: [f64; STATE_DIM],
    u_prev: [f64; INPUT_DIM],
    u_ref: [f64; INPUT_DIM],
    z_r: f64,
    v_r: [f64; 3],
    scratch: RefCell<Scratch>,
}

impl OcpProblem {
    pub fn new(weights: NmpcWeights, model: ModelParams) -> Self {
        let n = weights.horizon;
        let bounds = BoxConstraints::repeated(&ControlInput::LOWER, &ControlInput::UPPER, n)
            .expect("input box is well formed");
        let hover = [0.0, 0.0, model.hover_thrust()];
        Self {
            bounds,
            x0: [0.0; STATE_DIM],
            u_prev: hover,
            u_ref: hover,
            z_r: 0.0,
            v_r: [0.0; 3],
            scratch: RefCell::new(Scratch {
                traj: vec![[0.0; STATE_DIM]; n + 1],
                args: vec![0.0; 5 * n],
                mult: vec![0.0; 5 * n],
            }),
            weights,
            model,
        }
    }

    pub fn from_context(ctx: &NmpcContext) -> Result<Self, MeasurementError> {
        let mut p = Self::new(ctx.weights.clone(), ctx.model.clone());
        p.update(&ctx.state()?, &ctx.previous_input, &ctx.reference);
        Ok(p)
    }

    pub fn update(&mut self, x0: &MavState, previous: &ControlInput, reference: &ReferenceCommand) {
        self.x0 = *x0.as_array();
        self.u_prev = previous.as_array();
        self.z_r = reference.z_r();
        self.v_r = [reference.vx_r(), reference.vy_r(), 0.0];
    }

    pub fn horizon(&self) -> usize {
        self.weights.horizon
    }

    fn rollout(&self, u: &[f64], s: &mut Scratch) {
        let ts = self.weights.ts;
        s.traj[0] = self.x0;
        for j in 0..self.horizon() {
            let uj = stage(u, j);
            s.traj[j + 1] = euler_map(&s.traj[j], &uj, ts, &self.model);
            for (a, (vi, sign)) in SURFACE_AXES.iter().enumerate() {
                s.args[5 * j + a] =
                    self.weights.d_s - s.traj[j][idx::D_XP + a] - sign * s.traj[j + 1][*vi] * ts;
            }
        }
    }

    /// Tracking, actuation and smoothness terms on an already rolled-out trajectory.
    fn tracking_cost(&self, u: &[f64], s: &Scratch) -> f64 {
        let w = &self.weights;
        let mut j_total = 0.0;
        let mut prev = self.u_prev;
        for j in 0..self.horizon() {
            let x = &s.traj[j + 1];
            j_total += w.qz * (x[idx::Z] - self.z_r).powi(2);
            for i in 0..3 {
                j_total += w.qv[i] * (x[idx::VX + i] - self.v_r[i]).powi(2);
            }
            let uj = stage(u, j);
            for i in 0..INPUT_DIM {
                j_total += w.qu[i] * (uj[i] - self.u_ref[i]).powi(2);
                j_total += w.qdu[i] * (uj[i] - prev[i]).powi(2);
            }
            prev = uj;
        }
        j_total
    }

    /// Backward adjoint sweep. `mult[5j + a]` multiplies the gradient of the
    /// (unclipped) constraint argument at stage `j`, axis `a`; the caller zeroes
    /// inactive entries. With `with_cost` the tracking-cost gradient is added.
    fn backward(&self, u: &[f64], s: &Scratch, mult: &[f64], with_cost: bool, grad: &mut [f64]) {
        let w = &self.weights;
        let n = self.horizon();
        let ts = w.ts;

        let explicit = |t: usize, lam: &mut [f64; STATE_DIM]| {
            let x = &s.traj[t];
            if with_cost {
                lam[idx::Z] += 2.0 * w.qz * (x[idx::Z] - self.z_r);
                for i in 0..3 {
                    lam[idx::VX + i] += 2.0 * w.qv[i] * (x[idx::VX + i] - self.v_r[i]);
                }
            }
            for (a, (vi, sign)) in SURFACE_AXES.iter().enumerate() {
                // stage t-1 reads the velocity of x_t
                lam[*vi] -= mult[5 * (t - 1) + a] * sign * ts;
                // stage t reads the distance of x_t
                if t < n {
                    lam[idx::D_XP + a] -= mult[5 * t + a];
                }
            }
        };

        let mut lam = [0.0; STATE_DIM];
        explicit(n, &mut lam);
        for t in (0..n).rev() {
            let ut = stage(u, t);
            let (ax, au) = euler_vjp(&s.traj[t], &ut, ts, &self.model, &lam);
            let g = &mut grad[INPUT_DIM * t..INPUT_DIM * (t + 1)];
            g.copy_from_slice(&au);
            if with_cost {
                let prev = if t == 0 { self.u_prev } else { stage(u, t - 1) };
                for i in 0..INPUT_DIM {
                    g[i] += 2.0 * w.qu[i] * (ut[i] - self.u_ref[i]) + 2.0 * w.qdu[i] * (ut[i] - prev[i]);
                    if t + 1 < n {
                        g[i] -= 2.0 * w.qdu[i] * (u[INPUT_DIM * (t + 1) + i] - ut[i]);
                    }
                }
            }
            if t > 0 {
                lam = ax;
                explicit(t, &mut lam);
            }
        }
    }

    /// Rolls out `u` and returns the clamped predicted states.
    pub fn trajectory(&self, u: &[f64]) -> PredictedTrajectory {
        let mut s = self.scratch.borrow_mut();
        self.rollout(u, &mut s);
        PredictedTrajectory {
            states: s.traj.iter().map(|x| MavState::clamped(*x)).collect(),
        }
    }
}

#[inline]
fn stage(u: &[f64], j: usize) -> [f64; INPUT_DIM] {
    [u[INPUT_DIM * j], u[INPUT_DIM * j + 1], u[INPUT_DIM * j + 2]]
}

impl Problem for OcpProblem {
    fn bounds(&self) -> &BoxConstraints {
        &self.bounds
    }

    fn cost(&self, u: &[f64]) -> f64 {
        let mut s = self.scratch.borrow_mut();
        self.rollout(u, &mut s);
        self.tracking_cost(u, &s)
    }

    fn gradient(&self, u: &[f64], grad: &mut [f64]) {
        self.cost_gradient(u, grad);
    }

    fn cost_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.penalized_cost_gradient(u, 0.0, grad, &mut PenaltyWork::default())
    }
}

impl ConstrainedProblem for OcpProblem {
    fn n_constraints(&self) -> usize {
        5 * self.horizon()
    }

    fn constraints(&self, u: &[f64], out: &mut [f64]) {
        let mut s = self.scratch.borrow_mut();
        self.rollout(u, &mut s);
        for (o, a) in out.iter_mut().zip(&s.args) {
            *o = a.max(0.0);
        }
    }

    fn constraints_jt_vec(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let mut guard = self.scratch.borrow_mut();
        let s = &mut *guard;
        self.rollout(u, s);
        for ((m, a), vi) in s.mult.iter_mut().zip(&s.args).zip(v) {
            *m = if *a > 0.0 { *vi } else { 0.0 };
        }
        self.backward(u, s, &s.mult, false, out);
    }

    fn penalized_cost(&self, u: &[f64], rho: f64, _work: &mut PenaltyWork) -> f64 {
        let mut s = self.scratch.borrow_mut();
        self.rollout(u, &mut s);
        let pen: f64 = s.args.iter().map(|a| a.max(0.0).powi(2)).sum();
        self.tracking_cost(u, &s) + 0.5 * rho * pen
    }

    fn penalized_cost_gradient(&self, u: &[f64], rho: f64, grad: &mut [f64], _work: &mut PenaltyWork) -> f64 {
        let mut guard = self.scratch.borrow_mut();
        let s = &mut *guard;
        self.rollout(u, s);
        let mut pen = 0.0;
        for (m, a) in s.mult.iter_mut().zip(&s.args) {
            let c = a.max(0.0);
            pen += c * c;
            *m = rho * c;
        }
        let value = self.tracking_cost(u, s) + 0.5 * rho * pen;
        self.backward(u, s, &s.mult, true, grad);
        value
    }
}

fn flatten(u_seq: &[ControlInput]) -> Vec<f64> {
    u_seq.iter().flat_map(|u| u.as_array()).collect()
}

fn problem_for(u_seq: &[ControlInput], ctx: &NmpcContext) -> Result<OcpProblem, MeasurementError> {
    assert_eq!(u_seq.len(), ctx.weights.horizon, "input sequence length must equal the horizon");
    OcpProblem::from_context(ctx)
}

/// Tracking cost of an input sequence (no penalty).
pub fn cost(u_seq: &[ControlInput], ctx: &NmpcContext) -> Result<f64, MeasurementError> {
    Ok(problem_for(u_seq, ctx)?.cost(&flatten(u_seq)))
}

/// `max{0, d_s - d_j - ddot_{j+1} Ts}` for every stage `j` and axis, stage-major.
pub fn constraint_residuals(u_seq: &[ControlInput], ctx: &NmpcContext) -> Result<Vec<f64>, MeasurementError> {
    let p = problem_for(u_seq, ctx)?;
    let mut out = vec![0.0; p.n_constraints()];
    p.constraints(&flatten(u_seq), &mut out);
    Ok(out)
}

/// Gradient of `J + rho/2 |residuals|^2` with respect to the stacked inputs.
pub fn gradient(u_seq: &[ControlInput], ctx: &NmpcContext, rho: f64) -> Result<Vec<f64>, MeasurementError> {
    let p = problem_for(u_seq, ctx)?;
    let mut g = vec![0.0; INPUT_DIM * u_seq.len()];
    p.penalized_cost_gradient(&flatten(u_seq), rho, &mut g, &mut PenaltyWork::default());
    Ok(g)
}

/// Result of one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    /// First input of the optimized sequence, to be held for one sample.
    pub input: ControlInput,
    pub solution: NlpSolution,
    pub trajectory: PredictedTrajectory,
    /// The solve did not converge; the best iterate was applied anyway.
    pub degraded: bool,
    /// Hover references replaced the operator's because of repeated degraded solves.
    pub watchdog_active: bool,
    /// Constraint violation of the shifted warm start before solving.
    pub initial_violation: f64,
}

/// Receding-horizon controller: owns the context, the problem and the solver workspace.
pub struct NmpcController {
    ctx: NmpcContext,
    problem: OcpProblem,
    solver: PenaltySolver,
    u: Vec<f64>,
    degraded_streak: usize,
}

impl NmpcController {
    pub fn new(ctx: NmpcContext, settings: &SolverSettings) -> Self {
        let n = ctx.weights.horizon * INPUT_DIM;
        Self {
            problem: OcpProblem::new(ctx.weights.clone(), ctx.model.clone()),
            solver: PenaltySolver::from_settings(n, settings),
            u: vec![0.0; n],
            degraded_streak: 0,
            ctx,
        }
    }

    pub fn context(&self) -> &NmpcContext {
        &self.ctx
    }

    pub fn set_measurements(&mut self, estimate: StateEstimate, distances: ObstacleDistances) {
        self.ctx.estimate = estimate;
        self.ctx.distances = distances;
    }

    pub fn set_reference(&mut self, reference: ReferenceCommand) {
        self.ctx.reference = reference;
    }

    pub fn set_hook(&mut self, hook: Option<crate::solver::Hook>) {
        self.solver.set_hook(hook);
    }

    /// Solves the problem for the current context, applies the receding-horizon
    /// shift to the warm start and returns the input to hold.
    pub fn step(&mut self) -> Result<ControlStep, MeasurementError> {
        let x0 = self.ctx.state()?;
        let watchdog_active = self.degraded_streak >= self.ctx.weights.watchdog_ticks;
        let reference = if watchdog_active {
            self.ctx.reference.hold()
        } else {
            self.ctx.reference
        };
        self.problem.update(&x0, &self.ctx.previous_input, &reference);
        for (j, w) in self.ctx.warm_start.iter().enumerate() {
            self.u[INPUT_DIM * j..INPUT_DIM * (j + 1)].copy_from_slice(&w.as_array());
        }
        let initial_violation = {
            let mut out = vec![0.0; self.problem.n_constraints()];
            self.problem.constraints(&self.u, &mut out);
            crate::solver::inf_norm(&out)
        };

        let solution = self.solver.solve_in_place(&self.problem, &mut self.u);
        let input = ControlInput::saturating(stage(&self.u, 0));
        let trajectory = self.problem.trajectory(&self.u);

        let n = self.ctx.weights.horizon;
        for j in 0..n {
            let src = (j + 1).min(n - 1);
            self.ctx.warm_start[j] = ControlInput::saturating(stage(&self.u, src));
        }
        self.ctx.previous_input = input;

        let degraded = solution.status != SolverStatus::Converged;
        self.degraded_streak = if degraded { self.degraded_streak + 1 } else { 0 };

        Ok(ControlStep {
            input,
            solution,
            trajectory,
            degraded,
            watchdog_active,
            initial_violation,
        })
    }
}

/// One control tick on a standalone context. Updates the context's warm start
/// and previous input in place.
pub fn control_step(ctx: &mut NmpcContext, settings: &SolverSettings) -> Result<ControlStep, MeasurementError> {
    let mut controller = NmpcController::new(ctx.clone(), settings);
    let out = controller.step()?;
    *ctx = controller.ctx;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(z: f64, vx: f64) -> ReferenceCommand {
        ReferenceCommand::new(z, vx, 0.0, 0.0, 2.0).unwrap()
    }

    fn context(n: usize) -> NmpcContext {
        let weights = NmpcWeights {
            horizon: n,
            ..Default::default()
        };
        NmpcContext::new(weights, ModelParams::default(), reference(1.0, 0.0))
    }

    #[test]
    fn assemble_concatenates() {
        let s = assemble_state(&StateEstimate::default(), [15.0; 5]).unwrap();
        assert_eq!(s.as_array(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 15.0, 15.0, 15.0, 15.0, 15.0]);
        let s = assemble_state(&StateEstimate::default(), [2.0, f64::INFINITY, 3.0, f64::NAN, 1.0]).unwrap();
        assert_eq!(s.distances(), [2.0, 15.0, 3.0, 15.0, 1.0]);
        let est = StateEstimate {
            phi: 0.1,
            ..Default::default()
        };
        assert_eq!(assemble_state(&est, [5.0; 5]).unwrap().phi(), 0.1);
        let bad = StateEstimate {
            vx: f64::NAN,
            ..Default::default()
        };
        assert!(assemble_state(&bad, [5.0; 5]).is_err());
    }

    #[test]
    fn zero_cost_at_equilibrium() {
        let ctx = context(40);
        let u = vec![ctx.hover_input(); 40];
        assert_eq!(cost(&u, &ctx).unwrap(), 0.0);
        assert!(gradient(&u, &ctx, 100.0).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn one_step_altitude_cost() {
        // N = 1 is below the configured minimum but the cost formula is still
        // defined; build the problem directly.
        let weights = NmpcWeights {
            horizon: 1,
            ..Default::default()
        };
        let mut p = OcpProblem::new(weights, ModelParams::default());
        let x0 = MavState::hover(0.0, 15.0);
        let hover = ControlInput::level(0.5);
        p.update(&x0, &hover, &reference(1.0, 0.0));
        // hover keeps z at 0, so J = Qz * (0 - 1)^2
        assert!((p.cost(&hover.as_array()) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn residual_arithmetic() {
        let mut ctx = context(2);
        ctx.estimate.vx = 0.5;
        ctx.distances = ObstacleDistances::new([1.5, 15.0, 15.0, 15.0, 15.0]).unwrap();
        let u = vec![ctx.hover_input(); 2];
        let r = constraint_residuals(&u, &ctx).unwrap();
        assert_eq!(r[0], 0.0);

        ctx.estimate.vx = 0.0;
        ctx.distances = ObstacleDistances::new([0.9, 15.0, 15.0, 15.0, 15.0]).unwrap();
        let r = constraint_residuals(&u, &ctx).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-12);
        assert!(r[1..5].iter().all(|v| *v == 0.0));

        ctx.distances = ObstacleDistances::open();
        assert!(constraint_residuals(&u, &ctx).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_control_step() {
        let mut ctx = context(40);
        let step = control_step(&mut ctx, &SolverSettings::default()).unwrap();
        assert_eq!(step.solution.status, SolverStatus::Converged);
        let hover = ctx.hover_input().as_array();
        for (a, b) in step.input.as_array().iter().zip(hover) {
            assert!((a - b).abs() < 1e-6);
        }
        for s in &step.trajectory.states {
            assert!((s.z() - 1.0).abs() < 1e-6);
            assert!(s.velocity().iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn climb_command_raises_thrust() {
        let mut ctx = context(40);
        ctx.estimate.z = 0.0;
        let step = control_step(&mut ctx, &SolverSettings::default()).unwrap();
        assert!(step.input.thrust() > 0.5, "{:?}", step.input);
    }

    #[test]
    fn obstacle_ahead_blocks_advance() {
        let mut ctx = context(40);
        ctx.reference = reference(1.0, 0.5);
        ctx.distances = ObstacleDistances::new([1.0, 15.0, 15.0, 15.0, 15.0]).unwrap();
        let settings = SolverSettings::default();
        let step = control_step(&mut ctx, &settings).unwrap();
        assert!(step.input.theta_d() <= 1e-3, "{:?}", step.input);
        for s in &step.trajectory.states {
            assert!(s[idx::D_XP] >= 1.0 - settings.c_tol, "{}", s[idx::D_XP]);
        }
        assert!(step.solution.constraint_violation <= settings.c_tol);
    }

    #[test]
    fn warm_start_is_shifted() {
        let mut ctx = context(5);
        ctx.reference = reference(1.0, 1.0);
        let mut controller = NmpcController::new(ctx, &SolverSettings::default());
        let step = controller.step().unwrap();
        let ws = &controller.context().warm_start;
        let u = &step.solution.u_star;
        assert_eq!(ws[0].as_array(), stage(u, 1));
        assert_eq!(ws[3].as_array(), stage(u, 4));
        assert_eq!(ws[4].as_array(), stage(u, 4));
        assert_eq!(controller.context().previous_input, step.input);
    }

    #[test]
    fn watchdog_engages_after_repeated_degraded_solves() {
        // Wall closer than the safety distance: stage 0 cannot be satisfied.
        let mut ctx = context(10);
        ctx.reference = reference(1.0, 0.5);
        ctx.distances = ObstacleDistances::new([0.5, 15.0, 15.0, 15.0, 15.0]).unwrap();
        let settings = SolverSettings {
            max_inner_iters: 50,
            ..Default::default()
        };
        let mut controller = NmpcController::new(ctx, &settings);
        let flags: Vec<(bool, bool)> = (0..5)
            .map(|_| {
                let s = controller.step().unwrap();
                (s.degraded, s.watchdog_active)
            })
            .collect();
        assert!(flags.iter().all(|(d, _)| *d));
        assert_eq!(flags.iter().map(|(_, w)| *w).collect::<Vec<_>>(), [false, false, false, true, true]);
    }
}
