mod common;

use common::{kkt_controls, LinearQuadratic};
use hsddp::{
    backward_sweep, rollout, solve, warm_start_replan, AlState, InitialGuess, Matrix, SolveStatus,
    SolverOptions, Vector,
};

/// Double integrator driven from rest to position 1 with zero final velocity.
fn double_integrator() -> LinearQuadratic<2, 1> {
    let dt = 0.1;
    LinearQuadratic {
        a: Matrix::<2, 2>::new(1.0, dt, 0.0, 1.0),
        b: Matrix::<2, 1>::new(0.5 * dt * dt, dt),
        q: Matrix::<2, 2>::identity() * 0.1,
        r: Matrix::<1, 1>::new(0.01),
        qf: Matrix::zeros(),
        x0: Vector::<2>::zeros(),
        n: 20,
        switch_at: None,
        reset_quadratic: 0.0,
        terminal_eq: vec![(Vector::<2>::new(1.0, 0.0), 1.0), (Vector::<2>::new(0.0, 1.0), 0.0)],
    }
}

fn toy_options() -> SolverOptions {
    SolverOptions {
        constraint_tol: 1e-9,
        cost_tol: 1e-12,
        ..SolverOptions::default()
    }
}

#[test]
fn augmented_lagrangian_matches_kkt_solution() {
    let p = double_integrator();
    let options = toy_options();
    let sol = solve(&p, InitialGuess::Controls(vec![Vector::zeros(); p.n]), AlState::from_options(&options), &options).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!(sol.max_violation() < 1e-8, "violation {}", sol.max_violation());
    let outer = sol.trace.last().unwrap().outer + 1;
    assert!(outer <= 10, "{outer} outer iterations");
    let reference = kkt_controls(&p);
    for (k, u) in sol.us().iter().enumerate() {
        assert!((u[0] - reference[k]).abs() < 1e-6, "u[{k}] = {} vs {}", u[0], reference[k]);
    }
}

#[test]
fn violation_does_not_increase_across_outer_iterations() {
    let p = double_integrator();
    let options = toy_options();
    let sol = solve(&p, InitialGuess::Controls(vec![Vector::zeros(); p.n]), AlState::from_options(&options), &options).unwrap();
    let mut per_outer = Vec::new();
    for r in &sol.trace {
        if per_outer.len() <= r.outer {
            per_outer.push(r.violation);
        } else {
            per_outer[r.outer] = r.violation;
        }
    }
    for w in per_outer.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{per_outer:?}");
    }
}

#[test]
fn warm_start_resets_penalty_and_keeps_multipliers() {
    let p = double_integrator();
    let options = toy_options();
    let sol = solve(&p, InitialGuess::Controls(vec![Vector::zeros(); p.n]), AlState::from_options(&options), &options).unwrap();
    assert!(sol.al.sigma > options.sigma0);
    let replan = options.replan(3);
    let next = warm_start_replan(&sol, &p, 0, &replan, [0u64, 1]).unwrap();
    assert!(next.iterations <= 3);
    // Penalty restarts from σ₀ and grows at most once per iteration.
    let max_sigma = options.sigma0 * options.sigma_growth.powi(next.iterations as i32);
    assert!(next.al.sigma <= max_sigma, "sigma {}", next.al.sigma);
    let inherited = sol.al.multiplier(0);
    let drift = (next.al.multiplier(0) - inherited).abs();
    assert!(drift < 1e-3 * inherited.abs(), "multiplier drift {drift}");
    assert!(next.max_violation() < 1e-6);
    let restarted = sol.al.reinitialize([0]);
    assert_eq!(restarted.sigma, options.sigma0);
    assert_eq!(restarted.multiplier(0), inherited);
    assert_eq!(restarted.multiplier(1), 0.0);
}

#[test]
fn value_gradient_matches_cost_to_go_across_reset() {
    let mut p = double_integrator();
    p.terminal_eq.clear();
    p.qf = Matrix::identity();
    p.switch_at = Some(8);
    p.reset_quadratic = 0.5;
    p.x0 = Vector::<2>::new(0.3, -0.4);
    let options = SolverOptions { cost_tol: 1e-14, ..SolverOptions::default() };
    let optimal = |x0: Vector<2>| {
        let mut q = p.clone();
        q.x0 = x0;
        solve(&q, InitialGuess::Controls(vec![Vector::zeros(); q.n]), AlState::from_options(&options), &options).unwrap()
    };
    let sol = optimal(p.x0);
    let al = AlState::from_options(&options);
    let traj = rollout(&p, sol.us(), &al, 1e9).unwrap();
    let pass = backward_sweep(&p, &traj, &al, 0.0).unwrap();
    let h = 1e-5;
    for i in 0..2 {
        let mut e = Vector::<2>::zeros();
        e[i] = h;
        let fd = (optimal(p.x0 + e).cost() - optimal(p.x0 - e).cost()) / (2.0 * h);
        let g = pass.value_gradient[i];
        assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-3), "dV/dx{i}: {g} vs {fd}");
    }
}
