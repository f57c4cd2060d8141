use hkd_core::cost::*;
use hkd_core::dynamics::*;
use hkd_core::robot::{LegIndex, RobotParams};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> CostModel {
    CostModel {
        weights: CostWeights {
            body: [3.0, 2.0, 1.0, 4.0, 5.0, 6.0, 0.7, 0.8, 0.9, 1.5, 2.5, 3.5],
            joint: [0.4, 0.6, 0.8],
            foot: [7.0, 8.0, 0.5],
            grf: [1e-3, 2e-3, 3e-3],
            joint_velocity: [0.01, 0.02, 0.03],
            inactive_control: 1e-4,
            terminal_scale: 2.5,
        },
        barrier: RelaxedBarrier { mu: 0.2, delta: 5.0 },
        friction: 0.6,
        dt: 0.02,
    }
}

fn random_vec<const N: usize>(rng: &mut ChaCha8Rng, scale: f64) -> nalgebra::SVector<f64, N> {
    nalgebra::SVector::from_fn(|_, _| rng.random_range(-scale..scale))
}

fn random_stage(rng: &mut ChaCha8Rng) -> (HkdState, ControlInput, StageReference, ContactFlags) {
    let x = HkdState(random_vec(rng, 1.0));
    let mut u = ControlInput(random_vec(rng, 5.0));
    for leg in LegIndex::ALL {
        // Forces around the barrier knee on both sides.
        u.set_force(leg, u.force(leg) + Vector3::new(0.0, 0.0, rng.random_range(0.0..30.0)));
    }
    let r = StageReference {
        state: HkdState(random_vec(rng, 1.0)),
        grf: std::array::from_fn(|_| Vector3::new(0.0, 0.0, rng.random_range(0.0..40.0))),
    };
    let s = ContactFlags(std::array::from_fn(|_| rng.random_bool(0.5)));
    (x, u, r, s)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn running_cost_derivatives_match_central_differences() {
    let c = model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for case in 0..200 {
        let (x, u, r, s) = random_stage(&mut rng);
        let d = c.running_cost(&x, &u, &r, &s);
        assert!(rel(d.value, c.running_cost_value(&x, &u, &r, &s)) < 1e-14);
        for i in 0..STATE_DIM {
            let (mut xp, mut xm) = (x, x);
            xp.0[i] += h;
            xm.0[i] -= h;
            let fd = (c.running_cost_value(&xp, &u, &r, &s) - c.running_cost_value(&xm, &u, &r, &s)) / (2.0 * h);
            assert!(rel(d.lx[i], fd) < 1e-6, "lx[{i}] case {case}");
            let gp = c.running_cost(&xp, &u, &r, &s);
            let gm = c.running_cost(&xm, &u, &r, &s);
            let col = (gp.lx - gm.lx) / (2.0 * h);
            let cross = (gp.lu - gm.lu) / (2.0 * h);
            for j in 0..STATE_DIM {
                assert!(rel(d.lxx[(j, i)], col[j]) < 1e-6, "lxx[{j},{i}] case {case}");
            }
            for j in 0..CONTROL_DIM {
                assert!(rel(d.lux[(j, i)], cross[j]) < 1e-6, "lux[{j},{i}] case {case}");
            }
        }
        for i in 0..CONTROL_DIM {
            let (mut up, mut um) = (u, u);
            up.0[i] += h;
            um.0[i] -= h;
            let fd = (c.running_cost_value(&x, &up, &r, &s) - c.running_cost_value(&x, &um, &r, &s)) / (2.0 * h);
            assert!(rel(d.lu[i], fd) < 1e-6, "lu[{i}] case {case}");
            let col = (c.running_cost(&x, &up, &r, &s).lu - c.running_cost(&x, &um, &r, &s).lu) / (2.0 * h);
            for j in 0..CONTROL_DIM {
                assert!(rel(d.luu[(j, i)], col[j]) < 1e-6, "luu[{j},{i}] case {case}");
            }
        }
    }
}

#[test]
fn terminal_cost_derivatives_match_central_differences() {
    let c = model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    for case in 0..200 {
        let (x, _, r, s) = random_stage(&mut rng);
        let d = c.terminal_cost(&x, &r.state, &s);
        for i in 0..STATE_DIM {
            let (mut xp, mut xm) = (x, x);
            xp.0[i] += h;
            xm.0[i] -= h;
            let fd = (c.terminal_cost(&xp, &r.state, &s).value - c.terminal_cost(&xm, &r.state, &s).value) / (2.0 * h);
            assert!(rel(d.lx[i], fd) < 1e-6, "lx[{i}] case {case}");
            let col = (c.terminal_cost(&xp, &r.state, &s).lx - c.terminal_cost(&xm, &r.state, &s).lx) / (2.0 * h);
            for j in 0..STATE_DIM {
                assert!(rel(d.lxx[(j, i)], col[j]) < 1e-6, "lxx[{j},{i}] case {case}");
            }
        }
    }
}

#[test]
fn touchdown_gradient_matches_central_differences() {
    let p = RobotParams::a1();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for case in 0..200 {
        let mut x = HkdState(random_vec(&mut rng, 1.0));
        x.set_euler(Vector3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-3.0..3.0),
        ));
        let leg = LegIndex::ALL[case % 4];
        let (_, grad) = touchdown_residual(&p, &x, leg);
        for i in 0..STATE_DIM {
            let (mut xp, mut xm) = (x, x);
            xp.0[i] += h;
            xm.0[i] -= h;
            let fd = (touchdown_residual(&p, &xp, leg).0 - touchdown_residual(&p, &xm, leg).0) / (2.0 * h);
            assert!(rel(grad[i], fd) < 1e-6, "grad[{i}] case {case}");
        }
    }
}

#[test]
fn tracking_cost_vanishes_at_the_reference() {
    let c = model();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (_, _, r, s) = random_stage(&mut rng);
    let mut u = ControlInput::zeros();
    for leg in LegIndex::ALL {
        u.set_force(leg, r.grf[leg.index()]);
    }
    let t = c.tracking_cost(&r.state, &u, &r, &s);
    assert_eq!(t.value, 0.0);
    assert_eq!(t.lx.norm() + t.lu.norm(), 0.0);
    assert_eq!(c.terminal_cost(&r.state, &r.state, &s).value, 0.0);
}

fn any_stage() -> impl Strategy<Value = (HkdState, ControlInput, StageReference, ContactFlags)> {
    any::<u64>().prop_map(|seed| random_stage(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// A stance leg's swing-joint reference and weights, and a swing leg's
    /// foothold and force references and weights, never change the cost.
    #[test]
    fn leg_terms_are_gated_by_contact((x, u, _, s) in any_stage(), seed in any::<u64>(), d in prop::array::uniform3(-1.0f64..1.0)) {
        let c = model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let joints: [Vector3<f64>; 4] = std::array::from_fn(|_| random_vec(&mut rng, 1.0));
        let feet: [Vector3<f64>; 4] = std::array::from_fn(|_| random_vec(&mut rng, 1.0));
        let forces: [Vector3<f64>; 4] = std::array::from_fn(|_| random_vec(&mut rng, 20.0));
        let stage = |joints: &[Vector3<f64>; 4], feet: &[Vector3<f64>; 4], forces: &[Vector3<f64>; 4]| {
            let mut state = HkdState(random_vec(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), 1.0));
            for leg in LegIndex::ALL {
                let v = if s.in_stance(leg) { feet[leg.index()] } else { joints[leg.index()] };
                state.set_leg(leg, v);
            }
            let grf = std::array::from_fn(|j| if s.0[j] { forces[j] } else { Vector3::zeros() });
            StageReference { state, grf }
        };
        let base = c.running_cost_value(&x, &u, &stage(&joints, &feet, &forces), &s);
        for leg in LegIndex::ALL {
            let j = leg.index();
            let (mut j2, mut f2, mut l2) = (joints, feet, forces);
            if s.in_stance(leg) {
                j2[j] += Vector3::from(d);
            } else {
                f2[j] += Vector3::from(d);
                l2[j] += Vector3::from(d);
            }
            let perturbed = c.running_cost_value(&x, &u, &stage(&j2, &f2, &l2), &s);
            prop_assert_eq!(perturbed, base);
        }
    }

    /// With every leg in one mode, the weights of the other mode are inert.
    #[test]
    fn inactive_mode_weights_are_inert((x, u, r, _) in any_stage(), w in 0.1f64..100.0) {
        let c = model();
        let mut swing = c.clone();
        swing.weights.joint = [w; 3];
        swing.weights.joint_velocity = [w; 3];
        let st = ContactFlags::STANCE;
        prop_assert_eq!(swing.running_cost_value(&x, &u, &r, &st), c.running_cost_value(&x, &u, &r, &st));
        let mut stance = c.clone();
        stance.weights.foot = [w; 3];
        stance.weights.grf = [w; 3];
        let fl = ContactFlags::FLIGHT;
        prop_assert_eq!(stance.running_cost_value(&x, &u, &r, &fl), c.running_cost_value(&x, &u, &r, &fl));
    }

    #[test]
    fn friction_cone_is_closed_under_scaling(fz in 0.0f64..50.0, tx in -1.0f64..1.0, ty in -1.0f64..1.0, mu in 0.1f64..1.2, scale in 1e-3f64..1e3) {
        let s = ContactFlags([true, false, false, false]);
        let f = Vector3::new(tx * mu * fz, ty * mu * fz, fz);
        let mut u = ControlInput::zeros();
        u.set_force(LegIndex::FrontRight, f);
        prop_assert!(grf_residuals(&u, &s, mu).iter().all(|r| *r >= -1e-12));
        u.set_force(LegIndex::FrontRight, f * scale);
        let r = grf_residuals(&u, &s, mu);
        prop_assert_eq!(r.len(), 5);
        prop_assert!(r.iter().all(|r| *r >= -1e-9));
    }
}
