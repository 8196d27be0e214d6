use std::time::Instant;

use super::{
    ConstrainedProblem, Hook, NlpSolution, PanocSolver, Penalized, PenaltyWork, SolverEvent, SolverStatus,
};
use crate::config::SolverSettings;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySchedule {
    pub rho0: f64,
    pub rho_factor: f64,
    pub max_outer: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            rho_factor: 10.0,
            max_outer: 6,
        }
    }
}

/// Quadratic-penalty outer loop around a reusable [`PanocSolver`].
pub struct PenaltySolver {
    panoc: PanocSolver,
    schedule: PenaltySchedule,
    c_tol: f64,
    work: PenaltyWork,
}

impl PenaltySolver {
    pub fn new(n: usize, lbfgs_memory: usize, tol: f64, c_tol: f64, schedule: PenaltySchedule) -> Self {
        assert!(schedule.rho0 > 0.0 && schedule.rho_factor > 1.0 && schedule.max_outer >= 1);
        Self {
            panoc: PanocSolver::new(n, lbfgs_memory).with_tolerance(tol),
            schedule,
            c_tol,
            work: PenaltyWork::default(),
        }
    }

    pub fn from_settings(n: usize, s: &SolverSettings) -> Self {
        let mut solver = Self::new(
            n,
            s.lbfgs_memory,
            s.tol,
            s.c_tol,
            PenaltySchedule {
                rho0: s.rho0,
                rho_factor: s.rho_factor,
                max_outer: s.max_outer,
            },
        );
        solver.panoc.set_max_iters(s.max_inner_iters);
        solver
    }

    pub fn with_max_inner_iters(mut self, max_iters: usize) -> Self {
        self.panoc.set_max_iters(max_iters);
        self
    }

    pub fn set_hook(&mut self, hook: Option<Hook>) {
        self.panoc.set_hook(hook);
    }

    pub fn dim(&self) -> usize {
        self.panoc.dim()
    }

    /// Solves in place, warm-starting from the contents of `u`.
    pub fn solve_in_place<P: ConstrainedProblem + ?Sized>(&mut self, problem: &P, u: &mut [f64]) -> NlpSolution {
        let start = Instant::now();
        let mut rho = self.schedule.rho0;
        let mut inner_total = 0;
        let mut status = SolverStatus::MaxIters;
        let mut residual = f64::INFINITY;
        let mut violation = f64::INFINITY;
        let mut outer = 0;

        while outer < self.schedule.max_outer {
            outer += 1;
            let penalized = Penalized::new(problem, rho);
            let inner = self.panoc.solve(&penalized, u);
            inner_total += inner.iterations;
            residual = inner.residual;
            if inner.status == SolverStatus::Diverged {
                status = SolverStatus::Diverged;
                break;
            }
            violation = problem.violation(u, &mut self.work);
            self.panoc.emit(SolverEvent::Outer {
                outer,
                rho,
                violation,
                inner_status: inner.status,
            });
            if violation <= self.c_tol {
                status = inner.status;
                break;
            }
            rho *= self.schedule.rho_factor;
        }

        NlpSolution {
            u_star: u.to_vec(),
            fixed_point_residual: residual,
            constraint_violation: violation,
            cost: problem.cost(u),
            inner_iterations: inner_total,
            outer_iterations: outer,
            solve_time: start.elapsed().as_secs_f64(),
            status,
        }
    }
}

/// One-shot penalty solve with L-BFGS memory 10 and at most 500 inner iterations per round.
pub fn penalty_solve<P: ConstrainedProblem + ?Sized>(
    problem: &P,
    u0: &[f64],
    tol: f64,
    c_tol: f64,
    schedule: PenaltySchedule,
) -> NlpSolution {
    let mut u = u0.to_vec();
    PenaltySolver::new(problem.dim(), 10, tol, c_tol, schedule)
        .with_max_inner_iters(500)
        .solve_in_place(problem, &mut u)
}
