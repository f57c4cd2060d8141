//! Hybrid kinodynamic model: a single rigid body driven by ground reaction
//! forces of stance feet, plus per-leg kinematic variables. A stance leg
//! stores its world-frame foothold, a swing leg stores its joint angles and is
//! driven by joint velocity commands.

use std::fmt;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::{forward_kinematics, forward_kinematics_jacobians, BodyPose, LegIndex, RobotParams, NUM_LEGS};
use crate::rotation::{euler_rate_jacobian, euler_rate_matrix, rotation_derivatives, rotation_matrix};

pub const STATE_DIM: usize = 24;
pub const CONTROL_DIM: usize = 24;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type ControlVector = SVector<f64, CONTROL_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type ControlMatrix = SMatrix<f64, STATE_DIM, CONTROL_DIM>;

pub const THETA: usize = 0;
pub const POSITION: usize = 3;
pub const OMEGA: usize = 6;
pub const VELOCITY: usize = 9;
pub const BODY_DIM: usize = 12;

/// Offset of leg `j`'s flexible variable in the state.
pub const fn leg_state(j: usize) -> usize {
    BODY_DIM + 3 * j
}

/// Offset of leg `j`'s ground reaction force in the control.
pub const fn grf(j: usize) -> usize {
    3 * j
}

/// Offset of leg `j`'s joint velocity command in the control.
pub const fn joint_velocity(j: usize) -> usize {
    12 + 3 * j
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactMode {
    Stance,
    Swing,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("pitch {pitch} is at the Euler-angle singularity")]
    GimbalLock { pitch: f64 },
    #[error("leg {leg} must be in {expected:?} for this reset")]
    ModeMismatch { leg: LegIndex, expected: ContactMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ContactFlags(pub [bool; NUM_LEGS]);

impl ContactFlags {
    pub const STANCE: ContactFlags = ContactFlags([true; NUM_LEGS]);
    pub const FLIGHT: ContactFlags = ContactFlags([false; NUM_LEGS]);

    pub fn in_stance(&self, leg: LegIndex) -> bool {
        self.0[leg.index()]
    }

    pub fn stance_count(&self) -> usize {
        self.0.iter().filter(|&&s| s).count()
    }

    pub fn mode(&self, leg: LegIndex) -> ContactMode {
        if self.in_stance(leg) {
            ContactMode::Stance
        } else {
            ContactMode::Swing
        }
    }
}

impl fmt::Display for ContactFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.0 {
            f.write_str(if s { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Body orientation, position, angular velocity (body frame), linear
/// velocity (world frame) and four leg variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HkdState(pub StateVector);

impl HkdState {
    pub fn zeros() -> Self {
        Self(StateVector::zeros())
    }

    /// Standing at `height` with all four feet below the hips.
    pub fn standing(params: &RobotParams, height: f64) -> Self {
        let mut x = Self::zeros();
        x.set_position(Vector3::new(0.0, 0.0, height));
        let pose = x.pose();
        for leg in LegIndex::ALL {
            let mut foot = forward_kinematics(params, leg, &params.default_joint_angles[leg.index()], &pose);
            foot.z = 0.0;
            x.set_leg(leg, foot);
        }
        x
    }

    /// Standing pose with swing legs (per `s`) at their default joint angles.
    pub fn standing_in_mode(params: &RobotParams, height: f64, s: &ContactFlags) -> Self {
        let mut x = Self::standing(params, height);
        for leg in LegIndex::ALL {
            if !s.in_stance(leg) {
                x.set_leg(leg, params.default_joint_angles[leg.index()]);
            }
        }
        x
    }

    fn block(&self, i: usize) -> Vector3<f64> {
        self.0.fixed_rows::<3>(i).into_owned()
    }

    fn set_block(&mut self, i: usize, v: Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(i).copy_from(&v);
    }

    pub fn euler(&self) -> Vector3<f64> {
        self.block(THETA)
    }

    pub fn position(&self) -> Vector3<f64> {
        self.block(POSITION)
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.block(OMEGA)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.block(VELOCITY)
    }

    /// Foothold (stance) or joint angles (swing) of `leg`.
    pub fn leg(&self, leg: LegIndex) -> Vector3<f64> {
        self.block(leg_state(leg.index()))
    }

    pub fn set_euler(&mut self, v: Vector3<f64>) {
        self.set_block(THETA, v)
    }

    pub fn set_position(&mut self, v: Vector3<f64>) {
        self.set_block(POSITION, v)
    }

    pub fn set_omega(&mut self, v: Vector3<f64>) {
        self.set_block(OMEGA, v)
    }

    pub fn set_velocity(&mut self, v: Vector3<f64>) {
        self.set_block(VELOCITY, v)
    }

    pub fn set_leg(&mut self, leg: LegIndex, v: Vector3<f64>) {
        self.set_block(leg_state(leg.index()), v)
    }

    pub fn pose(&self) -> BodyPose {
        BodyPose {
            position: self.position(),
            euler: self.euler(),
        }
    }

    pub fn body(&self) -> SVector<f64, BODY_DIM> {
        self.0.fixed_rows::<BODY_DIM>(0).into_owned()
    }
}

/// Ground reaction forces (world frame, force on the body) and joint
/// velocity commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput(pub ControlVector);

impl ControlInput {
    pub fn zeros() -> Self {
        Self(ControlVector::zeros())
    }

    pub fn force(&self, leg: LegIndex) -> Vector3<f64> {
        self.0.fixed_rows::<3>(grf(leg.index())).into_owned()
    }

    pub fn joint_velocity(&self, leg: LegIndex) -> Vector3<f64> {
        self.0.fixed_rows::<3>(joint_velocity(leg.index())).into_owned()
    }

    pub fn set_force(&mut self, leg: LegIndex, f: Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(grf(leg.index())).copy_from(&f);
    }

    pub fn set_joint_velocity(&mut self, leg: LegIndex, v: Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(joint_velocity(leg.index())).copy_from(&v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Net world-frame moment of stance forces about the CoM.
fn contact_moment(x: &StateVector, u: &ControlVector, s: &ContactFlags) -> Vector3<f64> {
    let p = x.fixed_rows::<3>(POSITION);
    let mut m = Vector3::zeros();
    for j in 0..NUM_LEGS {
        if s.0[j] {
            let r = x.fixed_rows::<3>(leg_state(j)) - p;
            m += r.cross(&u.fixed_rows::<3>(grf(j)));
        }
    }
    m
}

/// State derivative of the hybrid kinodynamic model.
pub fn continuous_dynamics(
    params: &RobotParams,
    x: &HkdState,
    u: &ControlInput,
    s: &ContactFlags,
) -> Result<StateVector, ModelError> {
    let (x, u) = (&x.0, &u.0);
    let euler: Vector3<f64> = x.fixed_rows::<3>(THETA).into_owned();
    let omega: Vector3<f64> = x.fixed_rows::<3>(OMEGA).into_owned();
    let t = euler_rate_matrix(&euler)?;
    let r = rotation_matrix(&euler);

    let mut force = Vector3::zeros();
    for j in 0..NUM_LEGS {
        if s.0[j] {
            force += u.fixed_rows::<3>(grf(j));
        }
    }
    let torque = r.transpose() * contact_moment(x, u, s);
    let i_omega = params.inertia * omega;

    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<3>(THETA).copy_from(&(t * omega));
    dx.fixed_rows_mut::<3>(POSITION).copy_from(&x.fixed_rows::<3>(VELOCITY));
    dx.fixed_rows_mut::<3>(OMEGA)
        .copy_from(&(params.inertia_inv * (torque - omega.cross(&i_omega))));
    dx.fixed_rows_mut::<3>(VELOCITY)
        .copy_from(&(force / params.mass + params.gravity));
    for j in 0..NUM_LEGS {
        if !s.0[j] {
            dx.fixed_rows_mut::<3>(leg_state(j))
                .copy_from(&u.fixed_rows::<3>(joint_velocity(j)));
        }
    }
    Ok(dx)
}

/// Jacobians of [`continuous_dynamics`] with respect to state and control.
pub fn continuous_jacobians(
    params: &RobotParams,
    x: &HkdState,
    u: &ControlInput,
    s: &ContactFlags,
) -> Result<(StateMatrix, ControlMatrix), ModelError> {
    let (xv, uv) = (&x.0, &u.0);
    let euler = x.euler();
    let omega = x.omega();
    let p = x.position();
    let t = euler_rate_matrix(&euler)?;
    let dt_dtheta = euler_rate_jacobian(&euler, &omega)?;
    let r = rotation_matrix(&euler);
    let rt = r.transpose();
    let dr = rotation_derivatives(&euler);
    let moment = contact_moment(xv, uv, s);
    let i_inv = params.inertia_inv;

    let mut fx = StateMatrix::zeros();
    let mut fu = ControlMatrix::zeros();

    fx.fixed_view_mut::<3, 3>(THETA, THETA).copy_from(&dt_dtheta);
    fx.fixed_view_mut::<3, 3>(THETA, OMEGA).copy_from(&t);
    fx.fixed_view_mut::<3, 3>(POSITION, VELOCITY)
        .copy_from(&Matrix3::identity());

    let d_torque_dtheta = Matrix3::from_columns(&[
        dr[0].transpose() * moment,
        dr[1].transpose() * moment,
        dr[2].transpose() * moment,
    ]);
    fx.fixed_view_mut::<3, 3>(OMEGA, THETA)
        .copy_from(&(i_inv * d_torque_dtheta));
    let i_omega = params.inertia * omega;
    let d_gyro = skew(&omega) * params.inertia - skew(&i_omega);
    fx.fixed_view_mut::<3, 3>(OMEGA, OMEGA)
        .copy_from(&(-i_inv * d_gyro));

    let mut d_moment_dp = Matrix3::zeros();
    for j in 0..NUM_LEGS {
        if s.0[j] {
            let f = u.force(LegIndex::ALL[j]);
            let foot = x.leg(LegIndex::ALL[j]);
            d_moment_dp += skew(&f);
            fx.fixed_view_mut::<3, 3>(OMEGA, leg_state(j))
                .copy_from(&(-i_inv * rt * skew(&f)));
            fu.fixed_view_mut::<3, 3>(OMEGA, grf(j))
                .copy_from(&(i_inv * rt * skew(&(foot - p))));
            fu.fixed_view_mut::<3, 3>(VELOCITY, grf(j))
                .copy_from(&(Matrix3::identity() / params.mass));
        } else {
            fu.fixed_view_mut::<3, 3>(leg_state(j), joint_velocity(j))
                .copy_from(&Matrix3::identity());
        }
    }
    fx.fixed_view_mut::<3, 3>(OMEGA, POSITION)
        .copy_from(&(i_inv * rt * d_moment_dp));
    Ok((fx, fu))
}

fn add_scaled(x: &HkdState, dx: &StateVector, h: f64) -> HkdState {
    HkdState(x.0 + dx * h)
}

/// One integration step of length `dt`. Stance-leg footholds are copied
/// unchanged.
pub fn integrate_step(
    params: &RobotParams,
    x: &HkdState,
    u: &ControlInput,
    s: &ContactFlags,
    dt: f64,
    integrator: Integrator,
) -> Result<HkdState, ModelError> {
    let mut next = match integrator {
        Integrator::Euler => add_scaled(x, &continuous_dynamics(params, x, u, s)?, dt),
        Integrator::Rk4 => {
            let k1 = continuous_dynamics(params, x, u, s)?;
            let k2 = continuous_dynamics(params, &add_scaled(x, &k1, dt / 2.0), u, s)?;
            let k3 = continuous_dynamics(params, &add_scaled(x, &k2, dt / 2.0), u, s)?;
            let k4 = continuous_dynamics(params, &add_scaled(x, &k3, dt), u, s)?;
            add_scaled(x, &((k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0), dt)
        }
    };
    for leg in LegIndex::ALL {
        if s.in_stance(leg) {
            next.set_leg(leg, x.leg(leg));
        }
    }
    Ok(next)
}

/// Exact Jacobians `(A, B)` of [`integrate_step`].
pub fn linearize_step(
    params: &RobotParams,
    x: &HkdState,
    u: &ControlInput,
    s: &ContactFlags,
    dt: f64,
    integrator: Integrator,
) -> Result<(StateMatrix, ControlMatrix), ModelError> {
    let (a, b) = match integrator {
        Integrator::Euler => {
            let (fx, fu) = continuous_jacobians(params, x, u, s)?;
            (StateMatrix::identity() + fx * dt, fu * dt)
        }
        Integrator::Rk4 => {
            let eye = StateMatrix::identity();
            let k1 = continuous_dynamics(params, x, u, s)?;
            let (f1x, f1u) = continuous_jacobians(params, x, u, s)?;
            let x2 = add_scaled(x, &k1, dt / 2.0);
            let k2 = continuous_dynamics(params, &x2, u, s)?;
            let (f2x, f2u) = continuous_jacobians(params, &x2, u, s)?;
            let k2x = f2x * (eye + f1x * (dt / 2.0));
            let k2u = f2u + f2x * f1u * (dt / 2.0);
            let x3 = add_scaled(x, &k2, dt / 2.0);
            let k3 = continuous_dynamics(params, &x3, u, s)?;
            let (f3x, f3u) = continuous_jacobians(params, &x3, u, s)?;
            let k3x = f3x * (eye + k2x * (dt / 2.0));
            let k3u = f3u + f3x * k2u * (dt / 2.0);
            let x4 = add_scaled(x, &k3, dt);
            let (f4x, f4u) = continuous_jacobians(params, &x4, u, s)?;
            let k4x = f4x * (eye + k3x * dt);
            let k4u = f4u + f4x * k3u * dt;
            (
                eye + (f1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0),
                (f1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0),
            )
        }
    };
    let (mut a, mut b) = (a, b);
    for j in 0..NUM_LEGS {
        if s.0[j] {
            let i = leg_state(j);
            a.fixed_rows_mut::<3>(i).fill(0.0);
            a.fixed_view_mut::<3, 3>(i, i).copy_from(&Matrix3::identity());
            b.fixed_rows_mut::<3>(i).fill(0.0);
        }
    }
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetKind {
    Touchdown,
    Takeoff,
}

/// Swing to stance: the joint angles become the world-frame foothold.
/// Returns the new state and contact flags.
pub fn reset_touchdown(
    params: &RobotParams,
    x: &HkdState,
    s: &ContactFlags,
    leg: LegIndex,
) -> Result<(HkdState, ContactFlags), ModelError> {
    if s.in_stance(leg) {
        return Err(ModelError::ModeMismatch {
            leg,
            expected: ContactMode::Swing,
        });
    }
    let mut out = *x;
    out.set_leg(leg, forward_kinematics(params, leg, &x.leg(leg), &x.pose()));
    let mut flags = *s;
    flags.0[leg.index()] = true;
    Ok((out, flags))
}

/// Stance to swing: the joint angles restart from the default pose.
pub fn reset_takeoff(
    params: &RobotParams,
    x: &HkdState,
    s: &ContactFlags,
    leg: LegIndex,
) -> Result<(HkdState, ContactFlags), ModelError> {
    if !s.in_stance(leg) {
        return Err(ModelError::ModeMismatch {
            leg,
            expected: ContactMode::Stance,
        });
    }
    let mut out = *x;
    out.set_leg(leg, params.default_joint_angles[leg.index()]);
    let mut flags = *s;
    flags.0[leg.index()] = false;
    Ok((out, flags))
}

/// `∂x⁺/∂x⁻` of a single-leg reset.
pub fn reset_jacobian(params: &RobotParams, x: &HkdState, leg: LegIndex, kind: ResetKind) -> StateMatrix {
    let mut j = StateMatrix::identity();
    let i = leg_state(leg.index());
    j.fixed_view_mut::<3, 3>(i, i).fill(0.0);
    if kind == ResetKind::Touchdown {
        let (wrt_euler, wrt_q) = forward_kinematics_jacobians(params, leg, &x.leg(leg), &x.pose());
        j.fixed_view_mut::<3, 3>(i, THETA).copy_from(&wrt_euler);
        j.fixed_view_mut::<3, 3>(i, POSITION)
            .copy_from(&Matrix3::identity());
        j.fixed_view_mut::<3, 3>(i, i).copy_from(&wrt_q);
    }
    j
}

/// Apply the resets for every leg whose contact changes from `before` to
/// `after`, in leg order.
pub fn apply_transition(
    params: &RobotParams,
    x: &HkdState,
    before: &ContactFlags,
    after: &ContactFlags,
) -> Result<HkdState, ModelError> {
    let mut state = *x;
    let mut flags = *before;
    for leg in LegIndex::ALL {
        match (flags.in_stance(leg), after.in_stance(leg)) {
            (false, true) => (state, flags) = reset_touchdown(params, &state, &flags, leg)?,
            (true, false) => (state, flags) = reset_takeoff(params, &state, &flags, leg)?,
            _ => {}
        }
    }
    Ok(state)
}

/// Jacobian of [`apply_transition`]. Per-leg resets act on disjoint rows and
/// read only the body pose and their own leg block, so the product of the
/// single-leg Jacobians reduces to overwriting each changed leg's rows.
pub fn transition_jacobian(
    params: &RobotParams,
    x: &HkdState,
    before: &ContactFlags,
    after: &ContactFlags,
) -> StateMatrix {
    let mut j = StateMatrix::identity();
    for leg in LegIndex::ALL {
        let kind = match (before.in_stance(leg), after.in_stance(leg)) {
            (false, true) => ResetKind::Touchdown,
            (true, false) => ResetKind::Takeoff,
            _ => continue,
        };
        let i = leg_state(leg.index());
        let single = reset_jacobian(params, x, leg, kind);
        j.fixed_rows_mut::<3>(i).copy_from(&single.fixed_rows::<3>(i));
    }
    j
}
