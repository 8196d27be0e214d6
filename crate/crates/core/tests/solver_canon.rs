use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tunnelpilot_core::solver::{
    panoc_solve, penalty_solve, BoxConstraints, NlpProblem, PanocSolver, PenaltySchedule, PenaltySolver, Problem,
    SolverEvent, SolverStatus,
};

fn rosenbrock() -> NlpProblem<'static> {
    NlpProblem::new(
        BoxConstraints::uniform(2, -2.0, 2.0).unwrap(),
        |u| (1.0 - u[0]).powi(2) + 100.0 * (u[1] - u[0] * u[0]).powi(2),
        |u, g| {
            g[0] = -2.0 * (1.0 - u[0]) - 400.0 * u[0] * (u[1] - u[0] * u[0]);
            g[1] = 200.0 * (u[1] - u[0] * u[0]);
        },
    )
}

/// Random SPD `Q = A A^T + n I` and linear term, row-major.
fn random_qp(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            q[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum::<f64>();
        }
        q[i * n + i] += 0.5;
    }
    let lin = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
    (q, lin)
}

fn qp_problem(q: &[f64], lin: &[f64]) -> NlpProblem<'static> {
    let n = lin.len();
    let (q1, l1) = (q.to_vec(), lin.to_vec());
    let (q2, l2) = (q.to_vec(), lin.to_vec());
    NlpProblem::new(
        BoxConstraints::uniform(n, -1.0, 1.0).unwrap(),
        move |u| {
            let mut f = 0.0;
            for i in 0..n {
                let qu: f64 = (0..n).map(|j| q1[i * n + j] * u[j]).sum();
                f += 0.5 * u[i] * qu + l1[i] * u[i];
            }
            f
        },
        move |u, g| {
            for i in 0..n {
                g[i] = (0..n).map(|j| q2[i * n + j] * u[j]).sum::<f64>() + l2[i];
            }
        },
    )
}

/// Plain projected gradient with step 1/L, L bounding the largest eigenvalue.
fn projected_gradient_oracle(q: &[f64], lin: &[f64], iters: usize) -> Vec<f64> {
    let n = lin.len();
    let l: f64 = (0..n)
        .map(|i| (0..n).map(|j| q[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut u = vec![0.0; n];
    let mut g = vec![0.0; n];
    for _ in 0..iters {
        for i in 0..n {
            g[i] = (0..n).map(|j| q[i * n + j] * u[j]).sum::<f64>() + lin[i];
        }
        for i in 0..n {
            u[i] = (u[i] - g[i] / l).clamp(-1.0, 1.0);
        }
    }
    u
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn active_bound_is_exact() {
    let p = NlpProblem::new(
        BoxConstraints::uniform(1, 0.0, 1.0).unwrap(),
        |u| (u[0] - 3.0).powi(2),
        |u, g| g[0] = 2.0 * (u[0] - 3.0),
    );
    let sol = panoc_solve(&p, &[0.0], 1e-8, 100);
    assert_eq!(sol.status, SolverStatus::Converged);
    assert_eq!(sol.u_star, vec![1.0]);
}

#[test]
fn rosenbrock_in_box() {
    let sol = panoc_solve(&rosenbrock(), &[-1.2, 1.0], 1e-4, 500);
    assert_eq!(sol.status, SolverStatus::Converged);
    assert!(sol.fixed_point_residual <= 1e-4);
    assert!(sol.inner_iterations <= 500);
    assert!(max_abs_diff(&sol.u_star, &[1.0, 1.0]) < 1e-4, "{:?}", sol.u_star);
}

#[test]
fn convex_qp_matches_projected_gradient() {
    for seed in 0..5 {
        let (q, lin) = random_qp(seed, 10);
        let oracle = projected_gradient_oracle(&q, &lin, 1_000_000);
        let sol = panoc_solve(&qp_problem(&q, &lin), &[0.0; 10], 1e-10, 5000);
        assert_eq!(sol.status, SolverStatus::Converged);
        let err = max_abs_diff(&sol.u_star, &oracle);
        assert!(err <= 1e-6, "seed {seed}: {err}");
        // some coordinates must be on the box for the test to mean anything
        assert!(oracle.iter().any(|v| v.abs() == 1.0), "seed {seed}: no active bound");
    }
}

#[test]
fn without_lbfgs_still_solves_the_qp_family() {
    for seed in 0..3 {
        let (q, lin) = random_qp(seed, 10);
        let oracle = projected_gradient_oracle(&q, &lin, 1_000_000);
        let sol = PanocSolver::new(10, 10)
            .with_lbfgs(false)
            .with_tolerance(1e-10)
            .with_max_iters(100_000)
            .minimize(&qp_problem(&q, &lin), &[0.0; 10]);
        assert_eq!(sol.status, SolverStatus::Converged);
        assert!(max_abs_diff(&sol.u_star, &oracle) <= 1e-6);
    }
}

/// Collects every inner iteration reported by the hook.
fn recorded(solver: &mut PanocSolver) -> Arc<Mutex<Vec<SolverEvent>>> {
    let events = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&events);
    solver.set_hook(Some(Box::new(move |e: &SolverEvent| sink.lock().unwrap().push(*e))));
    events
}

#[test]
fn envelope_non_increasing_and_gamma_bounded() {
    let (q, lin) = random_qp(11, 10);
    let problems: Vec<(NlpProblem<'static>, Vec<f64>)> =
        vec![(rosenbrock(), vec![-1.2, 1.0]), (qp_problem(&q, &lin), vec![0.3; 10])];
    for (p, u0) in problems {
        let mut solver = PanocSolver::new(p.dim(), 10).with_tolerance(1e-8).with_max_iters(500);
        let events = recorded(&mut solver);
        solver.minimize(&p, &u0);
        let infos: Vec<_> = events
            .lock()
            .unwrap()
            .iter()
            .filter_map(|e| match e {
                SolverEvent::Inner(i) => Some(*i),
                _ => None,
            })
            .collect();
        assert!(infos.len() > 2);
        for w in infos.windows(2) {
            // The envelope is only comparable between iterations with the same step size.
            if w[0].gamma == w[1].gamma {
                let slack = 1e-12 * (1.0 + w[0].fbe.abs());
                assert!(w[1].fbe <= w[0].fbe + slack, "{:?} -> {:?}", w[0], w[1]);
            }
        }
        for i in &infos {
            assert!(i.gamma > 1e3 * f64::EPSILON && i.gamma.is_finite(), "{i:?}");
        }
    }
}

#[test]
fn identical_inputs_identical_iterates() {
    let run = || {
        let mut solver = PanocSolver::new(2, 10).with_tolerance(1e-8);
        let events = recorded(&mut solver);
        let sol = solver.minimize(&rosenbrock(), &[-1.2, 1.0]);
        let ev = events.lock().unwrap().clone();
        (sol.u_star, sol.inner_iterations, ev)
    };
    assert_eq!(run(), run());
}

#[test]
fn iterates_stay_in_box() {
    let (q, lin) = random_qp(3, 10);
    for u0 in [vec![5.0; 10], vec![-7.0; 10], vec![f64::NAN; 10]] {
        let sol = panoc_solve(&qp_problem(&q, &lin), &u0, 1e-6, 50);
        assert!(sol.u_star.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

fn violations(events: &Mutex<Vec<SolverEvent>>) -> Vec<f64> {
    events
        .lock()
        .unwrap()
        .iter()
        .filter_map(|e| match e {
            SolverEvent::Outer { violation, .. } => Some(*violation),
            _ => None,
        })
        .collect()
}

#[test]
fn penalty_active_max_constraint() {
    let p = NlpProblem::new(
        BoxConstraints::uniform(1, -5.0, 5.0).unwrap(),
        |u| u[0] * u[0],
        |u, g| g[0] = 2.0 * u[0],
    )
    .with_constraints(
        1,
        |u, out| out[0] = (1.0 - u[0]).max(0.0),
        |u, v, out| out[0] = if 1.0 - u[0] > 0.0 { -v[0] } else { 0.0 },
    );
    let mut solver = PenaltySolver::new(1, 10, 1e-6, 1e-3, PenaltySchedule::default());
    let events = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&events);
    solver.set_hook(Some(Box::new(move |e: &SolverEvent| sink.lock().unwrap().push(*e))));
    let mut u = vec![0.0];
    let sol = solver.solve_in_place(&p, &mut u);
    assert_eq!(sol.status, SolverStatus::Converged);
    assert!(sol.constraint_violation <= 1e-3);
    assert!((sol.u_star[0] - 1.0).abs() <= 1e-3, "{:?}", sol.u_star);
    let v = violations(&events);
    assert!(v.len() >= 2);
    assert!(v.windows(2).all(|w| w[1] <= w[0]), "{v:?}");
}

#[test]
fn penalty_linear_equality() {
    let p = NlpProblem::new(
        BoxConstraints::uniform(2, -10.0, 10.0).unwrap(),
        |u| (u[0] - 2.0).powi(2) + (u[1] - 2.0).powi(2),
        |u, g| {
            g[0] = 2.0 * (u[0] - 2.0);
            g[1] = 2.0 * (u[1] - 2.0);
        },
    )
    .with_constraints(
        1,
        |u, out| out[0] = u[0] + u[1] - 2.0,
        |_, v, out| {
            out[0] = v[0];
            out[1] = v[0];
        },
    );
    let mut solver = PenaltySolver::new(2, 10, 1e-6, 1e-3, PenaltySchedule::default());
    let events = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&events);
    solver.set_hook(Some(Box::new(move |e: &SolverEvent| sink.lock().unwrap().push(*e))));
    let mut u = vec![0.0, 0.0];
    let sol = solver.solve_in_place(&p, &mut u);
    assert_eq!(sol.status, SolverStatus::Converged);
    assert!(sol.constraint_violation <= 1e-3);
    assert!(max_abs_diff(&sol.u_star, &[1.0, 1.0]) <= 1e-3, "{:?}", sol.u_star);
    let v = violations(&events);
    assert!(v.windows(2).all(|w| w[1] <= w[0]), "{v:?}");
}

#[test]
fn one_shot_penalty_matches_solver() {
    let p = NlpProblem::new(
        BoxConstraints::uniform(1, -5.0, 5.0).unwrap(),
        |u| u[0] * u[0],
        |u, g| g[0] = 2.0 * u[0],
    )
    .with_constraints(
        1,
        |u, out| out[0] = (1.0 - u[0]).max(0.0),
        |u, v, out| out[0] = if 1.0 - u[0] > 0.0 { -v[0] } else { 0.0 },
    );
    let sol = penalty_solve(&p, &[0.0], 1e-6, 1e-3, PenaltySchedule::default());
    assert!((sol.u_star[0] - 1.0).abs() <= 1e-3);
}
