mod common;

use common::{random_lq, riccati, to_dynamic};
use hsddp::{backward_sweep, forward_sweep, rollout, solve, AlState, InitialGuess, SolveStatus, SolverOptions, Update, Vector};
use proptest::prelude::*;

const NX: usize = 6;
const NU: usize = 3;

#[test]
fn gains_match_riccati_recursion() {
    let p = random_lq::<NX, NU>(7, 30);
    let (gains, p0) = riccati(
        &to_dynamic(&p.a),
        &to_dynamic(&p.b),
        &to_dynamic(&p.q),
        &to_dynamic(&p.r),
        &to_dynamic(&p.qf),
        p.n,
    );
    let sol = solve(&p, InitialGuess::Controls(vec![Vector::zeros(); p.n]), AlState::from_options(&SolverOptions::default()), &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    for (k, g) in gains.iter().enumerate() {
        let err = (to_dynamic(&sol.gains[k]) - g).abs().max();
        assert!(err < 1e-8, "gain {k} differs by {err}");
    }
    let x0 = to_dynamic(&p.x0);
    let optimal = (x0.transpose() * p0 * x0)[(0, 0)];
    assert!((sol.cost() - optimal).abs() < 1e-8 * optimal.max(1.0));
}

#[test]
fn unconstrained_lqr_converges_in_one_accepted_step() {
    let p = random_lq::<NX, NU>(11, 20);
    let sol = solve(&p, InitialGuess::Controls(vec![Vector::zeros(); p.n]), AlState::from_options(&SolverOptions::default()), &SolverOptions::default()).unwrap();
    let accepted: Vec<_> = sol.trace.iter().filter(|r| r.accepted).collect();
    assert_eq!(accepted.len(), 1);
    assert_eq!(accepted[0].alpha, 1.0);
}

#[test]
fn alpha_one_forward_sweep_reaches_riccati_cost() {
    let p = random_lq::<NX, NU>(3, 25);
    let al = AlState::from_options(&SolverOptions::default());
    let nominal = rollout(&p, &vec![Vector::zeros(); p.n], &al, 1e9).unwrap();
    let pass = backward_sweep(&p, &nominal, &al, 0.0).unwrap();
    let t = forward_sweep(&p, Update { nominal: &nominal, feedforward: Some(&pass.feedforward), gains: Some(&pass.gains), alpha: 1.0 }, &al, 1e9).unwrap();
    let (_, p0) = riccati(&to_dynamic(&p.a), &to_dynamic(&p.b), &to_dynamic(&p.q), &to_dynamic(&p.r), &to_dynamic(&p.qf), p.n);
    let x0 = to_dynamic(&p.x0);
    let optimal = (x0.transpose() * p0 * x0)[(0, 0)];
    assert!((t.cost - optimal).abs() < 1e-8 * optimal.max(1.0));
    // Quadratic model is exact for a linear-quadratic problem.
    assert!((nominal.cost - t.cost - pass.expected_decrease(1.0)).abs() < 1e-8 * nominal.cost);
}

#[test]
fn zero_gradient_gives_zero_feedforward() {
    let mut p = random_lq::<NX, NU>(5, 10);
    p.x0 = Vector::zeros();
    let al = AlState::from_options(&SolverOptions::default());
    let nominal = rollout(&p, &vec![Vector::zeros(); p.n], &al, 1e9).unwrap();
    let pass = backward_sweep(&p, &nominal, &al, 0.0).unwrap();
    assert!(pass.feedforward.iter().all(|k| k.norm() == 0.0));
    assert_eq!(pass.expected_decrease(1.0), 0.0);
}

#[test]
fn alpha_zero_reproduces_nominal() {
    let p = random_lq::<NX, NU>(9, 15);
    let al = AlState::from_options(&SolverOptions::default());
    let us: Vec<_> = (0..p.n).map(|k| Vector::<NU>::repeat(0.1 * k as f64)).collect();
    let nominal = rollout(&p, &us, &al, 1e9).unwrap();
    let pass = backward_sweep(&p, &nominal, &al, 0.0).unwrap();
    let t = forward_sweep(&p, Update { nominal: &nominal, feedforward: Some(&pass.feedforward), gains: Some(&pass.gains), alpha: 0.0 }, &al, 1e9).unwrap();
    for (a, b) in t.xs.iter().zip(&nominal.xs) {
        assert!((a - b).norm() <= 1e-12);
    }
}

#[test]
fn diverging_rollout_is_reported() {
    let mut p = random_lq::<NX, NU>(1, 40);
    p.a *= 3.0;
    let al = AlState::from_options(&SolverOptions::default());
    let err = rollout(&p, &vec![Vector::zeros(); p.n], &al, 1e3).unwrap_err();
    assert!(matches!(err, hsddp::SolverError::RolloutDiverged { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn expected_decrease_is_nonnegative(seed in 0u64..10_000, reg in 0.0f64..10.0) {
        let p = random_lq::<4, 2>(seed, 12);
        let al = AlState::from_options(&SolverOptions::default());
        let us: Vec<_> = (0..p.n).map(|k| Vector::<2>::new((k as f64).sin(), 0.3)).collect();
        let nominal = rollout(&p, &us, &al, 1e9).unwrap();
        let pass = backward_sweep(&p, &nominal, &al, reg).unwrap();
        prop_assert!(pass.expected_decrease(1.0) >= 0.0);
    }

    #[test]
    fn solutions_are_monotone_and_rollout_consistent(seed in 0u64..10_000) {
        let mut p = random_lq::<4, 2>(seed, 15);
        p.switch_at = Some(6);
        p.reset_quadratic = 0.3;
        let options = SolverOptions::default();
        let sol = solve(&p, InitialGuess::Controls(vec![Vector::zeros(); p.n]), AlState::from_options(&options), &options).unwrap();
        prop_assert!(sol.is_monotone());
        let replay = rollout(&p, sol.us(), &sol.al, 1e9).unwrap();
        for (a, b) in replay.xs.iter().zip(sol.xs()) {
            prop_assert!((a - b).norm() <= 1e-10);
        }
        prop_assert!(sol.gains.iter().all(|g| g.iter().all(|v| v.is_finite())));
    }
}
