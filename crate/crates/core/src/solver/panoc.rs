use std::time::Instant;

use super::{dot, inf_norm, norm_sq, Hook, IterationInfo, Lbfgs, NlpSolution, Problem, SolverEvent, SolverStatus};

/// `gamma * L` kept below one so that the projected-gradient step certifies
/// a decrease of the envelope.
const GAMMA_L: f64 = 0.95;
/// Fraction of the guaranteed envelope decrease demanded by the line search.
const SIGMA_FRACTION: f64 = 0.5;
const LIPSCHITZ_DELTA: f64 = 1e-6;
const LIPSCHITZ_EPS: f64 = 1e-6;
const MIN_LIPSCHITZ: f64 = 1e-8;
const MAX_GAMMA_HALVINGS: usize = 60;
/// Halvings of tau before falling back to the plain projected-gradient point.
const MAX_TAU_HALVINGS: usize = 10;

/// Outcome of one inner PANOC run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct InnerOutcome {
    pub status: SolverStatus,
    pub residual: f64,
    pub cost: f64,
    pub iterations: usize,
}

/// PANOC with reusable workspace. One instance per thread; the buffers are
/// sized once for dimension `n` and reused by every call.
pub struct PanocSolver {
    n: usize,
    lbfgs: Lbfgs,
    use_lbfgs: bool,
    tol: f64,
    max_iters: usize,
    hook: Option<Hook>,
    grad: Vec<f64>,
    u_bar: Vec<f64>,
    r: Vec<f64>,
    d: Vec<f64>,
    u_prev: Vec<f64>,
    r_prev: Vec<f64>,
    u_new: Vec<f64>,
    grad_new: Vec<f64>,
    u_bar_new: Vec<f64>,
    r_new: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
}

impl PanocSolver {
    pub fn new(n: usize, lbfgs_memory: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            n,
            lbfgs: Lbfgs::new(n, lbfgs_memory),
            use_lbfgs: true,
            tol: 1e-4,
            max_iters: 500,
            hook: None,
            grad: z(),
            u_bar: z(),
            r: z(),
            d: z(),
            u_prev: z(),
            r_prev: z(),
            u_new: z(),
            grad_new: z(),
            u_bar_new: z(),
            r_new: z(),
            s: z(),
            y: z(),
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        assert!(tol > 0.0);
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    /// With L-BFGS disabled every step is a projected-gradient step.
    pub fn with_lbfgs(mut self, enabled: bool) -> Self {
        self.use_lbfgs = enabled;
        self
    }

    pub fn set_tolerance(&mut self, tol: f64) {
        self.tol = tol;
    }

    pub fn set_max_iters(&mut self, max_iters: usize) {
        self.max_iters = max_iters;
    }

    pub fn set_hook(&mut self, hook: Option<Hook>) {
        self.hook = hook;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub(crate) fn emit(&mut self, event: SolverEvent) {
        if let Some(h) = self.hook.as_mut() {
            h(&event);
        }
    }

    /// Minimizes `problem` starting from `u0`.
    pub fn minimize<P: Problem + ?Sized>(&mut self, problem: &P, u0: &[f64]) -> NlpSolution {
        let start = Instant::now();
        let mut u = u0.to_vec();
        let out = self.solve(problem, &mut u);
        NlpSolution {
            u_star: u,
            fixed_point_residual: out.residual,
            constraint_violation: 0.0,
            cost: out.cost,
            inner_iterations: out.iterations,
            outer_iterations: 1,
            solve_time: start.elapsed().as_secs_f64(),
            status: out.status,
        }
    }

    /// Runs PANOC in place. On return `u` holds the last forward-backward
    /// point, which lies inside the box.
    pub(crate) fn solve<P: Problem + ?Sized>(&mut self, problem: &P, u: &mut [f64]) -> InnerOutcome {
        assert_eq!(u.len(), self.n, "dimension mismatch");
        assert_eq!(problem.dim(), self.n, "problem dimension mismatch");
        let bounds = problem.bounds();
        for v in u.iter_mut() {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        bounds.project(u);

        let diverged = |iterations| InnerOutcome {
            status: SolverStatus::Diverged,
            residual: f64::INFINITY,
            cost: f64::NAN,
            iterations,
        };

        let mut f_u = problem.cost_gradient(u, &mut self.grad);
        if !f_u.is_finite() || !self.grad.iter().all(|g| g.is_finite()) {
            return diverged(0);
        }

        // Local Lipschitz estimate from a finite difference of gradients.
        let mut lipschitz = {
            for ((un, ui), h) in self.u_new.iter_mut().zip(u.iter()).zip(self.s.iter_mut()) {
                *h = LIPSCHITZ_DELTA.max(LIPSCHITZ_EPS * ui.abs());
                *un = ui + *h;
            }
            problem.cost_gradient(&self.u_new, &mut self.grad_new);
            let num: f64 = self
                .grad_new
                .iter()
                .zip(&self.grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let l = num / norm_sq(&self.s).sqrt();
            if !l.is_finite() {
                return diverged(0);
            }
            l.max(MIN_LIPSCHITZ)
        };
        let mut gamma = GAMMA_L / lipschitz;
        let mut sigma = SIGMA_FRACTION * (1.0 - GAMMA_L) / (2.0 * gamma);
        self.lbfgs.reset();
        let mut have_prev = false;
        let mut k = 0usize;

        loop {
            // Forward-backward step, shrinking gamma until the quadratic upper
            // bound holds at the projected point.
            let mut halvings = 0;
            let (f_bar, r_sq) = loop {
                for i in 0..self.n {
                    self.u_bar[i] = u[i] - gamma * self.grad[i];
                }
                bounds.project(&mut self.u_bar);
                for i in 0..self.n {
                    self.r[i] = u[i] - self.u_bar[i];
                }
                let f_bar = problem.cost(&self.u_bar);
                if !f_bar.is_finite() {
                    return diverged(k);
                }
                let r_sq = norm_sq(&self.r);
                let bound = f_u - dot(&self.grad, &self.r) + 0.5 * lipschitz * r_sq;
                if f_bar <= bound + 1e-12 * (1.0 + f_u.abs()) || r_sq == 0.0 || halvings >= MAX_GAMMA_HALVINGS {
                    break (f_bar, r_sq);
                }
                lipschitz *= 2.0;
                gamma /= 2.0;
                sigma *= 2.0;
                halvings += 1;
                self.lbfgs.reset();
                have_prev = false;
            };

            let residual = inf_norm(&self.r) / gamma;
            let fbe = f_u - dot(&self.grad, &self.r) + r_sq / (2.0 * gamma);

            if residual <= self.tol || k >= self.max_iters {
                self.emit(SolverEvent::Inner(IterationInfo {
                    iteration: k,
                    cost: f_u,
                    fbe,
                    residual,
                    gamma,
                    tau: 0.0,
                }));
                u.copy_from_slice(&self.u_bar);
                return InnerOutcome {
                    status: if residual <= self.tol {
                        SolverStatus::Converged
                    } else {
                        SolverStatus::MaxIters
                    },
                    residual,
                    cost: f_bar,
                    iterations: k,
                };
            }

            if self.use_lbfgs {
                if have_prev {
                    for i in 0..self.n {
                        self.s[i] = u[i] - self.u_prev[i];
                        self.y[i] = self.r[i] - self.r_prev[i];
                    }
                    self.lbfgs.update(&self.s, &self.y);
                }
                self.u_prev.copy_from_slice(u);
                self.r_prev.copy_from_slice(&self.r);
                have_prev = true;
                self.d.copy_from_slice(&self.r);
                self.lbfgs.apply(&mut self.d);
                for di in self.d.iter_mut() {
                    *di = -*di;
                }
            }
            let direction_ok = self.use_lbfgs && self.d.iter().all(|v| v.is_finite());

            // Line search on the envelope: tau = 1, 1/2, ... then the safe
            // projected-gradient point.
            let mut tau = if direction_ok { 1.0 } else { 0.0 };
            let mut tau_halvings = 0;
            let f_new = loop {
                if tau > 0.0 {
                    for i in 0..self.n {
                        self.u_new[i] = u[i] - (1.0 - tau) * self.r[i] + tau * self.d[i];
                    }
                } else {
                    self.u_new.copy_from_slice(&self.u_bar);
                }
                let f_new = problem.cost_gradient(&self.u_new, &mut self.grad_new);
                let finite = f_new.is_finite() && self.grad_new.iter().all(|g| g.is_finite());
                if tau == 0.0 {
                    if !finite {
                        return diverged(k);
                    }
                    break f_new;
                }
                if finite {
                    for i in 0..self.n {
                        self.u_bar_new[i] = self.u_new[i] - gamma * self.grad_new[i];
                    }
                    bounds.project(&mut self.u_bar_new);
                    for i in 0..self.n {
                        self.r_new[i] = self.u_new[i] - self.u_bar_new[i];
                    }
                    let fbe_new = f_new - dot(&self.grad_new, &self.r_new) + norm_sq(&self.r_new) / (2.0 * gamma);
                    if fbe_new <= fbe - sigma * r_sq {
                        break f_new;
                    }
                }
                tau_halvings += 1;
                tau = if tau_halvings > MAX_TAU_HALVINGS { 0.0 } else { tau / 2.0 };
            };

            self.emit(SolverEvent::Inner(IterationInfo {
                iteration: k,
                cost: f_u,
                fbe,
                residual,
                gamma,
                tau,
            }));

            u.copy_from_slice(&self.u_new);
            std::mem::swap(&mut self.grad, &mut self.grad_new);
            f_u = f_new;
            k += 1;
        }
    }
}

/// One-shot PANOC with L-BFGS memory 10.
pub fn panoc_solve<P: Problem + ?Sized>(problem: &P, u0: &[f64], tol: f64, max_iters: usize) -> NlpSolution {
    PanocSolver::new(problem.dim(), 10)
        .with_tolerance(tol)
        .with_max_iters(max_iters)
        .minimize(problem, u0)
}
