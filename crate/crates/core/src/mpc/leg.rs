//! Leg controller: Jacobian-transpose stance torques and Bezier/IK/PD swing.

use nalgebra::Vector3;

use crate::dynamics::HkdState;
use crate::robot::{
    clamp_joint_angles, foot_position_hip, inverse_kinematics, leg_jacobian, JointAngles, LegIndex,
    OutOfWorkspace, RobotParams,
};
use crate::rotation::rotation_matrix;

/// Clamp a force to the linearized friction cone with nonnegative normal
/// component.
pub fn clamp_to_cone(f: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    let fz = f.z.max(0.0);
    let lim = mu * fz;
    Vector3::new(f.x.clamp(-lim, lim), f.y.clamp(-lim, lim), fz)
}

/// Hip-frame position of a world point relative to `leg`'s abduction axis.
pub fn hip_frame(params: &RobotParams, x: &HkdState, leg: LegIndex, world: &Vector3<f64>) -> Vector3<f64> {
    rotation_matrix(&x.euler()).transpose() * (world - x.position()) - params.hip_offsets[leg.index()]
}

/// Joint angles of a stance leg from its foothold.
pub fn stance_joint_angles(params: &RobotParams, x: &HkdState, leg: LegIndex) -> Result<JointAngles, OutOfWorkspace> {
    inverse_kinematics(params, leg, &hip_frame(params, x, leg, &x.leg(leg)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Torque {
    pub tau: Vector3<f64>,
    pub saturated: bool,
}

fn saturate(params: &RobotParams, tau: Vector3<f64>) -> Torque {
    let lim = params.torque_limit;
    let clamped = Vector3::from_fn(|i, _| tau[i].clamp(-lim[i], lim[i]));
    Torque {
        saturated: clamped != tau,
        tau: clamped,
    }
}

/// Joint torques that make a stance foot at joint angles `q` exert the world
/// force `force` on the body: `τ = −Jᵀ Rᵀ λ`.
pub fn stance_torque(params: &RobotParams, x: &HkdState, leg: LegIndex, q: &JointAngles, force: &Vector3<f64>) -> Torque {
    let j = leg_jacobian(params, leg, q);
    let r = rotation_matrix(&x.euler());
    let tau = -(j.transpose() * (r.transpose() * force));
    if saturate(params, tau).saturated {
        log::debug!("{leg} stance torque {tau:?} exceeds the limit");
    }
    saturate(params, tau)
}

/// Cubic Bezier swing from `start` to `target` at `phase ∈ [0, 1]`. The two
/// inner control points sit at the thirds of the chord, lifted by
/// `4/3 · apex` so that the midpoint clears the chord by `apex`. Returns
/// position and velocity for a swing lasting `duration` seconds.
pub fn swing_foot_trajectory(
    start: &Vector3<f64>,
    target: &Vector3<f64>,
    phase: f64,
    apex: f64,
    duration: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let s = phase.clamp(0.0, 1.0);
    let lift = Vector3::new(0.0, 0.0, 4.0 / 3.0 * apex);
    let p0 = *start;
    let p3 = *target;
    let p1 = p0 + (p3 - p0) / 3.0 + lift;
    let p2 = p0 + (p3 - p0) * (2.0 / 3.0) + lift;
    let m = 1.0 - s;
    let pos = p0 * (m * m * m) + p1 * (3.0 * m * m * s) + p2 * (3.0 * m * s * s) + p3 * (s * s * s);
    let dpos = (p1 - p0) * (3.0 * m * m) + (p2 - p1) * (6.0 * m * s) + (p3 - p2) * (3.0 * s * s);
    (pos, dpos / duration)
}

/// Desired joint angles and rates that put the foot of a swing leg at the
/// world position `foot` moving at `foot_velocity`.
pub fn swing_joint_targets(
    params: &RobotParams,
    x: &HkdState,
    leg: LegIndex,
    foot: &Vector3<f64>,
    foot_velocity: &Vector3<f64>,
) -> Result<(JointAngles, Vector3<f64>), OutOfWorkspace> {
    let mut q = inverse_kinematics(params, leg, &hip_frame(params, x, leg, foot))?;
    clamp_joint_angles(params, &mut q);
    let r = rotation_matrix(&x.euler());
    let rel = foot_position_hip(params, leg, &q) + params.hip_offsets[leg.index()];
    // Foot velocity relative to the body, in the body frame.
    let body_rate = r.transpose() * (foot_velocity - x.velocity()) - x.omega().cross(&rel);
    let qd = leg_jacobian(params, leg, &q)
        .try_inverse()
        .map_or(Vector3::zeros(), |inv| inv * body_rate);
    Ok((q, qd))
}

/// Joint PD law `τ = Kp (q_des − q) + Kd (q̇_des − q̇)`.
pub fn swing_torque(
    params: &RobotParams,
    q: &JointAngles,
    qd: &Vector3<f64>,
    q_des: &JointAngles,
    qd_des: &Vector3<f64>,
) -> Torque {
    let tau = params.joint_kp.component_mul(&(q_des - q)) + params.joint_kd.component_mul(&(qd_des - qd));
    saturate(params, tau)
}

/// Joint velocity at which the PD torque vanishes: the command that drives
/// the kinematic swing joints of the plant.
pub fn swing_joint_velocity(params: &RobotParams, q: &JointAngles, q_des: &JointAngles, qd_des: &Vector3<f64>) -> Vector3<f64> {
    qd_des + params.joint_kp.component_div(&params.joint_kd).component_mul(&(q_des - q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::forward_kinematics;

    #[test]
    fn bezier_endpoints_and_midpoint() {
        let a = Vector3::new(0.1, -0.2, 0.0);
        let b = Vector3::new(0.3, -0.1, 0.02);
        assert_eq!(swing_foot_trajectory(&a, &b, 0.0, 0.08, 0.2).0, a);
        assert!((swing_foot_trajectory(&a, &b, 1.0, 0.08, 0.2).0 - b).norm() < 1e-15);
        // Hand evaluation: z(½) = (z0 + 3 z1 + 3 z2 + z3) / 8 with
        // z1 = 0.02/3 + 0.32/3, z2 = 0.04/3 + 0.32/3.
        let z1 = 0.02 / 3.0 + 0.32 / 3.0;
        let z2 = 0.04 / 3.0 + 0.32 / 3.0;
        let expected = (0.0 + 3.0 * z1 + 3.0 * z2 + 0.02) / 8.0;
        let (mid, _) = swing_foot_trajectory(&a, &b, 0.5, 0.08, 0.2);
        assert!((mid.z - expected).abs() < 1e-15);
        assert!((mid.z - 0.09).abs() < 1e-12);
    }

    #[test]
    fn flat_bezier_stays_on_segment() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(0.2, 0.1, 0.0);
        for i in 0..=20 {
            let (p, _) = swing_foot_trajectory(&a, &b, i as f64 / 20.0, 0.0, 0.3);
            let t = p.x / 0.2;
            assert!((p - b * t).norm() < 1e-14);
            assert!((0.0..=1.0).contains(&t));
        }
    }

    #[test]
    fn bezier_velocity_is_the_scaled_derivative() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(0.2, 0.1, -0.01);
        let h = 1e-6;
        for i in 1..10 {
            let s = i as f64 / 10.0;
            let (_, v) = swing_foot_trajectory(&a, &b, s, 0.07, 0.25);
            let fd = (swing_foot_trajectory(&a, &b, s + h, 0.07, 0.25).0
                - swing_foot_trajectory(&a, &b, s - h, 0.07, 0.25).0)
                / (2.0 * h * 0.25);
            assert!((v - fd).norm() < 1e-7);
        }
    }

    #[test]
    fn stance_torque_matches_matrix_product() {
        let p = RobotParams::a1();
        let mut x = HkdState::standing(&p, 0.27);
        x.set_euler(Vector3::new(0.05, -0.1, 0.3));
        let leg = LegIndex::HindLeft;
        let q = Vector3::new(0.1, 0.9, -1.7);
        let f = Vector3::new(2.0, -1.0, 25.0);
        // Independent product: finite-difference Jacobian of the body-frame
        // foot position, times the body-frame force on the foot.
        let h = 1e-7;
        let mut tau = Vector3::zeros();
        let r = rotation_matrix(&x.euler());
        let foot_force = -(r.transpose() * f);
        for i in 0..3 {
            let mut a = q;
            let mut b = q;
            a[i] += h;
            b[i] -= h;
            let col = (foot_position_hip(&p, leg, &a) - foot_position_hip(&p, leg, &b)) / (2.0 * h);
            tau[i] = col.dot(&foot_force);
        }
        let t = stance_torque(&p, &x, leg, &q, &f);
        assert!((t.tau - tau).norm() < 1e-6);
        assert!(!t.saturated);
    }

    #[test]
    fn pd_law_cases() {
        let p = RobotParams::a1();
        let q = Vector3::new(0.1, 0.8, -1.5);
        let qd = Vector3::new(0.5, -1.0, 2.0);
        assert_eq!(swing_torque(&p, &q, &qd, &q, &qd).tau, Vector3::zeros());
        let e = Vector3::new(0.01, -0.02, 0.03);
        let t = swing_torque(&p, &q, &Vector3::zeros(), &(q + e), &Vector3::zeros());
        assert!((t.tau - p.joint_kp.component_mul(&e)).norm() < 1e-12);
        // The implied velocity command nulls the torque.
        let v = swing_joint_velocity(&p, &q, &(q + e), &qd);
        assert!(swing_torque(&p, &q, &v, &(q + e), &qd).tau.norm() < 1e-12);
    }

    #[test]
    fn swing_targets_invert_kinematics() {
        let p = RobotParams::a1();
        let mut x = HkdState::standing(&p, 0.28);
        x.set_euler(Vector3::new(0.02, 0.05, 0.4));
        x.set_omega(Vector3::new(0.3, -0.2, 0.1));
        x.set_velocity(Vector3::new(0.5, 0.1, -0.2));
        let leg = LegIndex::FrontLeft;
        let q0 = Vector3::new(0.05, 0.7, -1.4);
        let foot = forward_kinematics(&p, leg, &q0, &x.pose());
        let v = Vector3::new(0.8, 0.0, 0.3);
        let (q, qd) = swing_joint_targets(&p, &x, leg, &foot, &v).unwrap();
        assert!((q - q0).norm() < 1e-9);
        // Moving body and joints together reproduces the foot velocity.
        let h = 1e-6;
        let mut xn = x;
        let rdot = crate::rotation::euler_rate_matrix(&x.euler()).unwrap() * x.omega();
        xn.set_euler(x.euler() + rdot * h);
        xn.set_position(x.position() + x.velocity() * h);
        let moved = forward_kinematics(&p, leg, &(q + qd * h), &xn.pose());
        assert!(((moved - foot) / h - v).norm() < 1e-4);
    }
}
