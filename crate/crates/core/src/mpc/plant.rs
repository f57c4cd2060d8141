//! Simulated plant: the hybrid kinodynamic model stepped at the control rate,
//! with contact events detected from foot heights and scripted disturbances.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{integrate_step, ContactFlags, ControlInput, HkdState, Integrator};
use crate::mpc::leg::{hip_frame, stance_joint_angles};
use crate::robot::{forward_kinematics, inverse_kinematics, JointAngles, LegIndex, RobotParams, NUM_LEGS};

/// Instantaneous change of the body velocities at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub time: f64,
    /// Body-frame angular velocity increment (rad/s).
    #[serde(default)]
    pub omega: [f64; 3],
    /// World-frame linear velocity increment (m/s).
    #[serde(default)]
    pub velocity: [f64; 3],
}

impl Disturbance {
    pub fn apply(&self, x: &mut HkdState) {
        x.set_omega(x.omega() + Vector3::from(self.omega));
        x.set_velocity(x.velocity() + Vector3::from(self.velocity));
    }
}

/// `count` horizontal velocity impulses at uniform times in `[start, end)`
/// with uniform direction and magnitude up to `max_speed`, sorted by time.
pub fn random_disturbances<R: Rng>(rng: &mut R, count: usize, start: f64, end: f64, max_speed: f64) -> Vec<Disturbance> {
    let mut out: Vec<Disturbance> = (0..count)
        .map(|_| {
            let time = rng.random_range(start..end);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = rng.random_range(0.0..=max_speed);
            Disturbance {
                time,
                omega: [0.0; 3],
                velocity: [speed * heading.cos(), speed * heading.sin(), 0.0],
            }
        })
        .collect();
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("simulation diverged at t = {time:.3} s: {reason}")]
pub struct SimulationDiverged {
    pub time: f64,
    pub reason: String,
}

/// Plant state: the model state with leg slots interpreted by the physical
/// contacts, plus what the swing controller remembers.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: HkdState,
    pub contacts: ContactFlags,
    /// Swing joint velocities applied over the last step.
    pub joint_velocity: [Vector3<f64>; NUM_LEGS],
    /// World foot position and time at the last liftoff.
    pub liftoff: [Vector3<f64>; NUM_LEGS],
    pub liftoff_time: [f64; NUM_LEGS],
    /// Last feasible swing joint target.
    pub q_des: [JointAngles; NUM_LEGS],
    /// Landing target of the current swing, frozen once it is due.
    pub swing_target: [Vector3<f64>; NUM_LEGS],
}

impl PlantState {
    pub fn new(params: &RobotParams, x: HkdState, contacts: ContactFlags) -> Self {
        let mut plant = Self {
            x,
            contacts,
            joint_velocity: [Vector3::zeros(); NUM_LEGS],
            liftoff: [Vector3::zeros(); NUM_LEGS],
            liftoff_time: [0.0; NUM_LEGS],
            q_des: params.default_joint_angles,
            swing_target: [Vector3::zeros(); NUM_LEGS],
        };
        for leg in LegIndex::ALL {
            plant.liftoff[leg.index()] = plant.foot_position(params, leg);
            plant.q_des[leg.index()] = plant.joint_angles(params, leg);
            plant.swing_target[leg.index()] = plant.liftoff[leg.index()];
        }
        plant
    }

    pub fn foot_position(&self, params: &RobotParams, leg: LegIndex) -> Vector3<f64> {
        if self.contacts.in_stance(leg) {
            self.x.leg(leg)
        } else {
            forward_kinematics(params, leg, &self.x.leg(leg), &self.x.pose())
        }
    }

    /// Joint angles of `leg`; stance legs fall back to the default pose when
    /// the foothold is out of reach.
    pub fn joint_angles(&self, params: &RobotParams, leg: LegIndex) -> JointAngles {
        if self.contacts.in_stance(leg) {
            stance_joint_angles(params, &self.x, leg).unwrap_or(params.default_joint_angles[leg.index()])
        } else {
            self.x.leg(leg)
        }
    }

    /// The state with leg slots expressed in the modes `flags`, as the
    /// planner expects them. A foot on the ground early reports its joint
    /// angles; a foot still in the air when it should be down reports its
    /// position.
    pub fn observe(&self, params: &RobotParams, flags: &ContactFlags) -> HkdState {
        let mut x = self.x;
        for leg in LegIndex::ALL {
            match (self.contacts.in_stance(leg), flags.in_stance(leg)) {
                (true, false) => x.set_leg(leg, self.joint_angles(params, leg)),
                (false, true) => x.set_leg(leg, self.foot_position(params, leg)),
                _ => {}
            }
        }
        x
    }

    pub fn takeoff(&mut self, params: &RobotParams, leg: LegIndex, t: f64) {
        let foot = self.foot_position(params, leg);
        if self.contacts.in_stance(leg) {
            let q = inverse_kinematics(params, leg, &hip_frame(params, &self.x, leg, &foot))
                .unwrap_or(params.default_joint_angles[leg.index()]);
            self.x.set_leg(leg, q);
            self.contacts.0[leg.index()] = false;
            self.q_des[leg.index()] = q;
        }
        self.joint_velocity[leg.index()] = Vector3::zeros();
        self.liftoff[leg.index()] = foot;
        self.liftoff_time[leg.index()] = t;
    }

    /// Touchdown at the current foot position, projected onto the ground.
    pub fn touchdown(&mut self, params: &RobotParams, leg: LegIndex) {
        let mut foot = self.foot_position(params, leg);
        foot.z = 0.0;
        self.x.set_leg(leg, foot);
        self.contacts.0[leg.index()] = true;
        self.joint_velocity[leg.index()] = Vector3::zeros();
    }
}

/// Bounds beyond which a run counts as diverged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceBounds {
    pub max_state_norm: f64,
    /// Lowest admissible body height as a fraction of the standing height.
    pub min_height_ratio: f64,
    /// Largest admissible |roll| and |pitch| (rad).
    pub max_tilt: f64,
}

impl Default for DivergenceBounds {
    fn default() -> Self {
        Self {
            max_state_norm: 1e3,
            min_height_ratio: 0.3,
            max_tilt: 1.0,
        }
    }
}

/// Advance the plant by one step under `u` (forces of stance feet, joint
/// velocities of swing legs).
pub fn step_plant(
    params: &RobotParams,
    plant: &mut PlantState,
    u: &ControlInput,
    dt: f64,
    integrator: Integrator,
    bounds: &DivergenceBounds,
    t: f64,
) -> Result<(), SimulationDiverged> {
    let diverged = |reason: String| SimulationDiverged { time: t + dt, reason };
    let next = integrate_step(params, &plant.x, u, &plant.contacts, dt, integrator)
        .map_err(|e| diverged(e.to_string()))?;
    let norm = next.0.norm();
    if !norm.is_finite() || norm > bounds.max_state_norm {
        return Err(diverged(format!("state norm {norm:.3e}")));
    }
    let z = next.position().z;
    if z < bounds.min_height_ratio * params.standing_height {
        return Err(diverged(format!("body height {z:.3} m")));
    }
    let e = next.euler();
    if e.x.abs() > bounds.max_tilt || e.y.abs() > bounds.max_tilt {
        return Err(diverged(format!("body tilt roll {:.3} pitch {:.3}", e.x, e.y)));
    }
    plant.x = next;
    for leg in LegIndex::ALL {
        if !plant.contacts.in_stance(leg) {
            plant.joint_velocity[leg.index()] = u.joint_velocity(leg);
        }
    }
    Ok(())
}
