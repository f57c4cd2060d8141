//! Tracking cost, friction-cone barrier and touchdown constraints.
//!
//! The running cost is
//! `dt · (‖δx_B‖²_{Q_b} + Σ_swing ‖δq‖²_{Q_J} + Σ_stance ‖δp_f‖²_{Q_f} + Σ_stance ‖δλ‖²_{R_λ})`
//! plus small regularization on control entries with no effect in the
//! current contact mode and a relaxed log barrier on the linearized friction
//! cone. The terminal cost drops the force term and is scaled by
//! `terminal_scale`.

use hsddp::{StageCost, TerminalCost};
use nalgebra::{RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{grf, joint_velocity, leg_state, ContactFlags, ControlInput, ControlVector, HkdState, StateVector, BODY_DIM, POSITION};
use crate::robot::{forward_kinematics, forward_kinematics_jacobians, LegIndex, RobotParams, NUM_LEGS};

pub type HkdStageCost = StageCost<24, 24>;
pub type HkdTerminalCost = TerminalCost<24>;

/// Diagonal weights of the tracking cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    /// `[θ; p; ω; v]` tracking weights.
    pub body: [f64; BODY_DIM],
    /// Swing joint-angle weights.
    pub joint: [f64; 3],
    /// Stance foothold weights.
    pub foot: [f64; 3],
    /// Stance force weights.
    pub grf: [f64; 3],
    /// Swing joint-velocity weights.
    pub joint_velocity: [f64; 3],
    /// Weight on control entries that the dynamics ignore (swing forces,
    /// stance joint velocities). Keeps the control Hessian positive definite.
    pub inactive_control: f64,
    pub terminal_scale: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            body: [20.0, 20.0, 10.0, 5.0, 5.0, 100.0, 0.5, 0.5, 0.5, 2.0, 2.0, 2.0],
            joint: [0.5, 0.5, 0.5],
            foot: [20.0, 20.0, 0.0],
            grf: [1e-4, 1e-4, 1e-4],
            joint_velocity: [1e-3, 1e-3, 1e-3],
            inactive_control: 1e-6,
            terminal_scale: 1.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), String> {
        let psd = self
            .body
            .iter()
            .chain(&self.joint)
            .chain(&self.foot)
            .all(|w| *w >= 0.0 && w.is_finite());
        let pd = self
            .grf
            .iter()
            .chain(&self.joint_velocity)
            .all(|w| *w > 0.0 && w.is_finite());
        if !psd {
            return Err("state weights must be nonnegative".into());
        }
        if !pd || !(self.inactive_control > 0.0) {
            return Err("control weights must be positive".into());
        }
        if !(self.terminal_scale >= 0.0) {
            return Err("terminal scale must be nonnegative".into());
        }
        Ok(())
    }
}

/// Relaxed logarithmic barrier: `−μ ln z` for `z ≥ δ`, continued by a
/// quadratic below `δ` so that it stays finite and twice differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxedBarrier {
    pub mu: f64,
    pub delta: f64,
}

impl Default for RelaxedBarrier {
    fn default() -> Self {
        Self { mu: 0.1, delta: 1.0 }
    }
}

impl RelaxedBarrier {
    pub fn value(&self, z: f64) -> f64 {
        if z >= self.delta {
            -self.mu * z.ln()
        } else {
            let r = (z - 2.0 * self.delta) / self.delta;
            self.mu * (0.5 * (r * r - 1.0) - self.delta.ln())
        }
    }

    pub fn gradient(&self, z: f64) -> f64 {
        if z >= self.delta {
            -self.mu / z
        } else {
            self.mu * (z - 2.0 * self.delta) / (self.delta * self.delta)
        }
    }

    pub fn curvature(&self, z: f64) -> f64 {
        if z >= self.delta {
            self.mu / (z * z)
        } else {
            self.mu / (self.delta * self.delta)
        }
    }
}

/// Rows `a_i` of the linearized friction cone `a_i · λ ≥ 0`.
fn cone_rows(mu: f64) -> [RowVector3<f64>; 5] {
    [
        RowVector3::new(0.0, 0.0, 1.0),
        RowVector3::new(-1.0, 0.0, mu),
        RowVector3::new(1.0, 0.0, mu),
        RowVector3::new(0.0, -1.0, mu),
        RowVector3::new(0.0, 1.0, mu),
    ]
}

/// Friction-cone residuals of the stance feet, five per stance leg:
/// `[λ_z; μλ_z − λ_x; μλ_z + λ_x; μλ_z − λ_y; μλ_z + λ_y]`. Feasible iff all
/// are nonnegative.
pub fn grf_residuals(u: &ControlInput, s: &ContactFlags, mu: f64) -> Vec<f64> {
    let rows = cone_rows(mu);
    let mut out = Vec::with_capacity(5 * s.stance_count());
    for leg in LegIndex::ALL {
        if s.in_stance(leg) {
            let f = u.force(leg);
            out.extend(rows.iter().map(|a| (a * f)[0]));
        }
    }
    out
}

/// World-frame height of a swing foot, and its gradient with respect to the
/// state. `x` holds the leg's joint angles.
pub fn touchdown_residual(params: &RobotParams, x: &HkdState, leg: LegIndex) -> (f64, StateVector) {
    let q = x.leg(leg);
    let pose = x.pose();
    let foot = forward_kinematics(params, leg, &q, &pose);
    let (wrt_euler, wrt_q) = forward_kinematics_jacobians(params, leg, &q, &pose);
    let mut grad = StateVector::zeros();
    grad.fixed_rows_mut::<3>(0).copy_from(&wrt_euler.row(2).transpose());
    grad[POSITION + 2] = 1.0;
    grad.fixed_rows_mut::<3>(leg_state(leg.index()))
        .copy_from(&wrt_q.row(2).transpose());
    (foot.z, grad)
}

/// Diagonal weight of every state entry for contact flags `s`.
fn state_weights(w: &CostWeights, s: &ContactFlags) -> StateVector {
    let mut d = StateVector::zeros();
    for i in 0..BODY_DIM {
        d[i] = w.body[i];
    }
    for leg in LegIndex::ALL {
        let weights = if s.in_stance(leg) { w.foot } else { w.joint };
        d.fixed_rows_mut::<3>(leg_state(leg.index()))
            .copy_from(&Vector3::from(weights));
    }
    d
}

fn control_weights(w: &CostWeights, s: &ContactFlags) -> ControlVector {
    let mut d = ControlVector::zeros();
    for leg in LegIndex::ALL {
        let j = leg.index();
        let (force, joint) = if s.in_stance(leg) {
            (Vector3::from(w.grf), Vector3::repeat(w.inactive_control))
        } else {
            (Vector3::repeat(w.inactive_control), Vector3::from(w.joint_velocity))
        };
        d.fixed_rows_mut::<3>(grf(j)).copy_from(&force);
        d.fixed_rows_mut::<3>(joint_velocity(j)).copy_from(&joint);
    }
    d
}

/// Everything the stage cost compares against at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReference {
    /// State-shaped reference for the step's contact flags.
    pub state: HkdState,
    pub grf: [Vector3<f64>; NUM_LEGS],
}

impl StageReference {
    /// Control-shaped reference: forces set, joint velocities zero.
    pub fn control(&self) -> ControlVector {
        let mut u = ControlInput::zeros();
        for leg in LegIndex::ALL {
            u.set_force(leg, self.grf[leg.index()]);
        }
        u.0
    }
}

/// Cost model shared by every step of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub weights: CostWeights,
    pub barrier: RelaxedBarrier,
    pub friction: f64,
    pub dt: f64,
}

impl CostModel {
    /// Tracking cost plus friction-cone barrier.
    pub fn running_cost(&self, x: &HkdState, u: &ControlInput, r: &StageReference, s: &ContactFlags) -> HkdStageCost {
        let mut c = self.tracking_cost(x, u, r, s);
        let b = self.barrier_cost(u, s);
        c.value += b.value;
        c.lu += b.lu;
        c.luu += b.luu;
        c
    }

    pub fn running_cost_value(&self, x: &HkdState, u: &ControlInput, r: &StageReference, s: &ContactFlags) -> f64 {
        self.tracking_value(x, u, r, s) + self.barrier_value(u, s)
    }

    /// Contact-gated quadratic tracking term, zero at the reference.
    pub fn tracking_cost(&self, x: &HkdState, u: &ControlInput, r: &StageReference, s: &ContactFlags) -> HkdStageCost {
        let dx = x.0 - r.state.0;
        let du = u.0 - r.control();
        let qd = state_weights(&self.weights, s) * self.dt;
        let rd = control_weights(&self.weights, s) * self.dt;
        let mut c = HkdStageCost::zero();
        c.value = self.tracking_value(x, u, r, s);
        c.lx = qd.component_mul(&dx) * 2.0;
        c.lu = rd.component_mul(&du) * 2.0;
        c.lxx.set_diagonal(&(qd * 2.0));
        c.luu.set_diagonal(&(rd * 2.0));
        c
    }

    pub fn tracking_value(&self, x: &HkdState, u: &ControlInput, r: &StageReference, s: &ContactFlags) -> f64 {
        let dx = x.0 - r.state.0;
        let du = u.0 - r.control();
        let qd = state_weights(&self.weights, s);
        let rd = control_weights(&self.weights, s);
        self.dt * (dx.dot(&qd.component_mul(&dx)) + du.dot(&rd.component_mul(&du)))
    }

    /// Relaxed barrier on the friction-cone residuals of the stance feet.
    pub fn barrier_cost(&self, u: &ControlInput, s: &ContactFlags) -> HkdStageCost {
        let mut c = HkdStageCost::zero();
        c.value = self.barrier_value(u, s);
        let rows = cone_rows(self.friction);
        for leg in LegIndex::ALL {
            if !s.in_stance(leg) {
                continue;
            }
            let f = u.force(leg);
            let o = grf(leg.index());
            for a in &rows {
                let z = (a * f)[0];
                let g = self.dt * self.barrier.gradient(z);
                let h = self.dt * self.barrier.curvature(z);
                let mut lu = c.lu.fixed_rows_mut::<3>(o);
                lu += a.transpose() * g;
                let mut luu = c.luu.fixed_view_mut::<3, 3>(o, o);
                luu += a.transpose() * a * h;
            }
        }
        c
    }

    pub fn barrier_value(&self, u: &ControlInput, s: &ContactFlags) -> f64 {
        let rows = cone_rows(self.friction);
        let mut value = 0.0;
        for leg in LegIndex::ALL {
            if s.in_stance(leg) {
                let f = u.force(leg);
                for a in &rows {
                    value += self.dt * self.barrier.value((a * f)[0]);
                }
            }
        }
        value
    }

    /// Terminal cost against the state-shaped reference `x_ref` for the
    /// contact flags `s` of the phase that ends.
    pub fn terminal_cost(&self, x: &HkdState, x_ref: &HkdState, s: &ContactFlags) -> HkdTerminalCost {
        let dx = x.0 - x_ref.0;
        let qd = state_weights(&self.weights, s) * self.weights.terminal_scale;
        let mut c = HkdTerminalCost::zero();
        c.value = dx.dot(&qd.component_mul(&dx));
        c.lx = qd.component_mul(&dx) * 2.0;
        c.lxx.set_diagonal(&(qd * 2.0));
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn friction_residual_examples() {
        let mut u = ControlInput::zeros();
        u.set_force(LegIndex::FrontRight, Vector3::new(0.0, 0.0, 10.0));
        let s = ContactFlags([true, false, false, false]);
        let r = grf_residuals(&u, &s, 0.7);
        let expected = [10.0, 7.0, 7.0, 7.0, 7.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        u.set_force(LegIndex::FrontRight, Vector3::new(8.0, 0.0, 10.0));
        let r = grf_residuals(&u, &s, 0.7);
        assert!((r[1] + 1.0).abs() < 1e-12);
        assert!(grf_residuals(&u, &ContactFlags::FLIGHT, 0.7).is_empty());
    }

    #[test]
    fn barrier_is_continuous_at_delta() {
        let b = RelaxedBarrier { mu: 0.3, delta: 2.0 };
        let e = 1e-9;
        assert!((b.value(2.0 - e) - b.value(2.0 + e)).abs() < 1e-8);
        assert!((b.gradient(2.0 - e) - b.gradient(2.0 + e)).abs() < 1e-8);
        assert!((b.curvature(2.0 - e) - b.curvature(2.0 + e)).abs() < 1e-8);
        assert!(b.value(-5.0).is_finite());
    }

    #[test]
    fn touchdown_residual_reads_foot_height() {
        let p = RobotParams::a1();
        let mut x = HkdState::standing(&p, p.standing_height);
        x.set_leg(LegIndex::FrontLeft, p.default_joint_angles[1]);
        assert!(touchdown_residual(&p, &x, LegIndex::FrontLeft).0.abs() < 1e-12);
        x.set_position(x.position() + Vector3::new(0.0, 0.0, 0.03));
        assert!((touchdown_residual(&p, &x, LegIndex::FrontLeft).0 - 0.03).abs() < 1e-12);
    }
}
