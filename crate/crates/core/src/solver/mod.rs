//! Box-constrained nonconvex minimization.
//!
//! [`PanocSolver`] minimizes a smooth cost over a box with PANOC: projected
//! gradient steps blended with L-BFGS directions on the fixed-point residual,
//! globalized by a backtracking line search on the forward-backward envelope.
//! [`PenaltySolver`] wraps it in a quadratic-penalty loop for equality
//! constraints `F(u) = 0`.

mod lbfgs;
mod panoc;
mod penalty;

pub use lbfgs::Lbfgs;
pub use panoc::{panoc_solve, PanocSolver};
pub use penalty::{penalty_solve, PenaltySchedule, PenaltySolver};

use std::cell::RefCell;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("box bounds have mismatched lengths ({lower} vs {upper})")]
    DimensionMismatch { lower: usize, upper: usize },
    #[error("lower bound exceeds upper bound at coordinate {0}")]
    EmptyBox(usize),
    #[error("non-finite bound at coordinate {0}")]
    NonFiniteBound(usize),
}

/// Componentwise bounds `lower <= u <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxConstraints {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SolverError> {
        if lower.len() != upper.len() {
            return Err(SolverError::DimensionMismatch {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() {
                return Err(SolverError::NonFiniteBound(i));
            }
            if l > u {
                return Err(SolverError::EmptyBox(i));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self, SolverError> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// The same per-stage bounds repeated `stages` times.
    pub fn repeated(lo: &[f64], hi: &[f64], stages: usize) -> Result<Self, SolverError> {
        Self::new(lo.repeat(stages), hi.repeat(stages))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn project(&self, u: &mut [f64]) {
        for ((v, l), h) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(*l).min(*h);
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, l), h)| v >= l && v <= h)
    }
}

/// Smooth cost over a box.
pub trait Problem {
    fn bounds(&self) -> &BoxConstraints;

    fn cost(&self, u: &[f64]) -> f64;

    fn gradient(&self, u: &[f64], grad: &mut [f64]);

    /// Cost and gradient together. Override when both share a forward pass.
    fn cost_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.gradient(u, grad);
        self.cost(u)
    }

    fn dim(&self) -> usize {
        self.bounds().dim()
    }
}

/// Scratch buffers for the default penalized oracles.
#[derive(Debug, Default)]
pub struct PenaltyWork {
    residuals: Vec<f64>,
    jtv: Vec<f64>,
}

/// A [`Problem`] with equality constraints `F(u) = 0`.
pub trait ConstrainedProblem: Problem {
    fn n_constraints(&self) -> usize;

    fn constraints(&self, u: &[f64], out: &mut [f64]);

    /// `J_F(u)^T v`.
    fn constraints_jt_vec(&self, u: &[f64], v: &[f64], out: &mut [f64]);

    /// `f(u) + rho/2 |F(u)|^2`.
    fn penalized_cost(&self, u: &[f64], rho: f64, work: &mut PenaltyWork) -> f64 {
        work.residuals.resize(self.n_constraints(), 0.0);
        self.constraints(u, &mut work.residuals);
        let sq: f64 = work.residuals.iter().map(|c| c * c).sum();
        self.cost(u) + 0.5 * rho * sq
    }

    /// Value and gradient of [`Self::penalized_cost`].
    fn penalized_cost_gradient(
        &self,
        u: &[f64],
        rho: f64,
        grad: &mut [f64],
        work: &mut PenaltyWork,
    ) -> f64 {
        let m = self.n_constraints();
        work.residuals.resize(m, 0.0);
        work.jtv.resize(grad.len(), 0.0);
        self.constraints(u, &mut work.residuals);
        let sq: f64 = work.residuals.iter().map(|c| c * c).sum();
        let f = self.cost_gradient(u, grad);
        if m > 0 {
            self.constraints_jt_vec(u, &work.residuals, &mut work.jtv);
            for (g, j) in grad.iter_mut().zip(&work.jtv) {
                *g += rho * j;
            }
        }
        f + 0.5 * rho * sq
    }

    fn violation(&self, u: &[f64], work: &mut PenaltyWork) -> f64 {
        work.residuals.resize(self.n_constraints(), 0.0);
        self.constraints(u, &mut work.residuals);
        inf_norm(&work.residuals)
    }
}

type CostFn<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;
type GradFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) + 'a>;
type JtvFn<'a> = Box<dyn Fn(&[f64], &[f64], &mut [f64]) + 'a>;

struct ConstraintOracles<'a> {
    m: usize,
    map: GradFn<'a>,
    jt_vec: JtvFn<'a>,
}

/// A problem assembled from closures.
pub struct NlpProblem<'a> {
    bounds: BoxConstraints,
    cost: CostFn<'a>,
    grad: GradFn<'a>,
    constraints: Option<ConstraintOracles<'a>>,
}

impl<'a> NlpProblem<'a> {
    pub fn new(
        bounds: BoxConstraints,
        cost: impl Fn(&[f64]) -> f64 + 'a,
        grad: impl Fn(&[f64], &mut [f64]) + 'a,
    ) -> Self {
        Self {
            bounds,
            cost: Box::new(cost),
            grad: Box::new(grad),
            constraints: None,
        }
    }

    /// Adds `F: R^n -> R^m` with its Jacobian-transpose-vector product.
    pub fn with_constraints(
        mut self,
        m: usize,
        map: impl Fn(&[f64], &mut [f64]) + 'a,
        jt_vec: impl Fn(&[f64], &[f64], &mut [f64]) + 'a,
    ) -> Self {
        self.constraints = Some(ConstraintOracles {
            m,
            map: Box::new(map),
            jt_vec: Box::new(jt_vec),
        });
        self
    }
}

impl Problem for NlpProblem<'_> {
    fn bounds(&self) -> &BoxConstraints {
        &self.bounds
    }

    fn cost(&self, u: &[f64]) -> f64 {
        (self.cost)(u)
    }

    fn gradient(&self, u: &[f64], grad: &mut [f64]) {
        (self.grad)(u, grad)
    }
}

impl ConstrainedProblem for NlpProblem<'_> {
    fn n_constraints(&self) -> usize {
        self.constraints.as_ref().map_or(0, |c| c.m)
    }

    fn constraints(&self, u: &[f64], out: &mut [f64]) {
        if let Some(c) = &self.constraints {
            (c.map)(u, out)
        }
    }

    fn constraints_jt_vec(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.constraints {
            Some(c) => (c.jt_vec)(u, v, out),
            None => out.fill(0.0),
        }
    }
}

/// Inner problem of the penalty loop: `f + rho/2 |F|^2` over the same box.
pub struct Penalized<'p, P: ConstrainedProblem + ?Sized> {
    problem: &'p P,
    rho: f64,
    work: RefCell<PenaltyWork>,
}

impl<'p, P: ConstrainedProblem + ?Sized> Penalized<'p, P> {
    pub fn new(problem: &'p P, rho: f64) -> Self {
        Self {
            problem,
            rho,
            work: RefCell::new(PenaltyWork::default()),
        }
    }
}

impl<P: ConstrainedProblem + ?Sized> Problem for Penalized<'_, P> {
    fn bounds(&self) -> &BoxConstraints {
        self.problem.bounds()
    }

    fn cost(&self, u: &[f64]) -> f64 {
        self.problem.penalized_cost(u, self.rho, &mut self.work.borrow_mut())
    }

    fn gradient(&self, u: &[f64], grad: &mut [f64]) {
        self.cost_gradient(u, grad);
    }

    fn cost_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.problem
            .penalized_cost_gradient(u, self.rho, grad, &mut self.work.borrow_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIters,
    Diverged,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIters => "max_iters",
            SolverStatus::Diverged => "diverged",
        }
    }
}

impl std::str::FromStr for SolverStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "converged" => Ok(Self::Converged),
            "max_iters" => Ok(Self::MaxIters),
            "diverged" => Ok(Self::Diverged),
            other => Err(format!("unknown solver status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    /// Minimizer estimate, always inside the box.
    pub u_star: Vec<f64>,
    /// `|u - proj(u - gamma grad f(u))|_inf / gamma` at the last inner iterate.
    pub fixed_point_residual: f64,
    /// `|F(u_star)|_inf`; zero for unconstrained solves.
    pub constraint_violation: f64,
    pub cost: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Wall-clock seconds.
    pub solve_time: f64,
    pub status: SolverStatus,
}

/// Per-iteration record streamed to the instrumentation hook.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationInfo {
    pub iteration: usize,
    pub cost: f64,
    /// Forward-backward envelope at the current iterate.
    pub fbe: f64,
    pub residual: f64,
    pub gamma: f64,
    /// Step accepted by the line search after this iteration (0 = pure projected gradient).
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverEvent {
    Inner(IterationInfo),
    Outer {
        outer: usize,
        rho: f64,
        violation: f64,
        inner_status: SolverStatus,
    },
}

pub type Hook = Box<dyn FnMut(&SolverEvent) + Send>;

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_validation() {
        assert_eq!(
            BoxConstraints::new(vec![0.0, 1.0], vec![1.0, 0.0]),
            Err(SolverError::EmptyBox(1))
        );
        assert!(BoxConstraints::new(vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(BoxConstraints::new(vec![f64::NAN], vec![1.0]).is_err());
        let b = BoxConstraints::uniform(3, -1.0, 1.0).unwrap();
        let mut u = [-3.0, 0.5, 9.0];
        b.project(&mut u);
        assert_eq!(u, [-1.0, 0.5, 1.0]);
        assert!(b.contains(&u));
    }

    #[test]
    fn default_penalized_gradient_adds_jacobian_term() {
        // f = u0^2 + u1^2, F = u0 + u1 - 2
        let p = NlpProblem::new(
            BoxConstraints::uniform(2, -5.0, 5.0).unwrap(),
            |u| u[0] * u[0] + u[1] * u[1],
            |u, g| {
                g[0] = 2.0 * u[0];
                g[1] = 2.0 * u[1];
            },
        )
        .with_constraints(
            1,
            |u, out| out[0] = u[0] + u[1] - 2.0,
            |_u, v, out| {
                out[0] = v[0];
                out[1] = v[0];
            },
        );
        let mut work = PenaltyWork::default();
        let mut g = [0.0; 2];
        let val = p.penalized_cost_gradient(&[1.0, 2.0], 10.0, &mut g, &mut work);
        assert!((val - (5.0 + 5.0)).abs() < 1e-12);
        assert!((g[0] - (2.0 + 10.0)).abs() < 1e-12);
        assert!((g[1] - (4.0 + 10.0)).abs() < 1e-12);
        assert_eq!(p.violation(&[1.0, 2.0], &mut work), 1.0);
    }
}
