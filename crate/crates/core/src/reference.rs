//! Heuristic references for the tracking cost.
//!
//! Positions integrate the commanded velocities from the measured state,
//! angles and angular rates are zero apart from an optional yaw rate, swing
//! joints track the default pose, stance feet track Raibert footholds and
//! stance forces share the body weight equally.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ContactFlags, HkdState, BODY_DIM, OMEGA, POSITION, THETA, VELOCITY};
use crate::gait::{compose, ContactSchedule, GaitError, GaitSpec};
use crate::robot::{LegIndex, RobotParams, NUM_LEGS};

/// Desired motion during one gait segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionCommand {
    /// Body height (m).
    pub height: f64,
    /// Forward and lateral velocity in the heading frame (m/s).
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    /// Height of the body bump over a flight phase (m). When absent the
    /// ballistic apex `g T² / 8` of the flight duration `T` is used.
    #[serde(default)]
    pub apex: Option<f64>,
}

impl MotionCommand {
    pub fn new(height: f64, vx: f64, vy: f64) -> Self {
        Self {
            height,
            vx,
            vy,
            yaw_rate: 0.0,
            apex: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandSegment {
    pub start_step: usize,
    pub end_step: usize,
    pub command: MotionCommand,
}

/// Composed contact schedule together with the command of each segment.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub schedule: ContactSchedule,
    pub commands: Vec<CommandSegment>,
}

/// How far past the scripted schedule to look for the end of a contact run.
pub const LOOKAHEAD_STEPS: i64 = 200;

impl MotionScript {
    pub fn new(segments: &[(GaitSpec, MotionCommand)], dt: f64) -> Result<Self, GaitError> {
        let specs: Vec<GaitSpec> = segments.iter().map(|(g, _)| g.clone()).collect();
        let schedule = compose(&specs, dt)?;
        let mut commands = Vec::with_capacity(segments.len());
        let mut start = 0;
        for (spec, command) in segments {
            if !(command.height > 0.0) {
                return Err(GaitError::InvalidSpec(format!("height {} must be positive", command.height)));
            }
            let n = (spec.duration / dt).round() as usize;
            commands.push(CommandSegment {
                start_step: start,
                end_step: start + n,
                command: *command,
            });
            start += n;
        }
        Ok(Self { schedule, commands })
    }

    pub fn dt(&self) -> f64 {
        self.schedule.dt
    }

    pub fn duration(&self) -> f64 {
        self.schedule.end_time()
    }

    /// Command active at schedule step `i`; the last command continues past
    /// the end.
    pub fn command_at(&self, i: i64) -> &MotionCommand {
        let i = i.max(0) as usize;
        self.commands
            .iter()
            .find(|c| c.start_step <= i && i < c.end_step)
            .map_or(&self.commands.last().expect("nonempty script").command, |c| &c.command)
    }

    /// All-swing run `[start, end)` containing step `i`, if any.
    pub fn flight_run(&self, i: i64) -> Option<(i64, i64)> {
        let s = &self.schedule;
        if s.flags(i) != ContactFlags::FLIGHT {
            return None;
        }
        let mut a = i;
        while a > 0 && s.flags(a - 1) == ContactFlags::FLIGHT {
            a -= 1;
        }
        let mut b = i + 1;
        while b < s.len() as i64 + LOOKAHEAD_STEPS && s.flags(b) == ContactFlags::FLIGHT {
            b += 1;
        }
        Some((a, b))
    }

    /// Scheduled all-swing intervals `(start, end)` in seconds.
    pub fn flight_windows(&self) -> Vec<(f64, f64)> {
        let dt = self.dt();
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.schedule.len() as i64 {
            if let Some((a, b)) = self.flight_run(i) {
                out.push((a as f64 * dt, b as f64 * dt));
                i = b;
            } else {
                i += 1;
            }
        }
        out
    }

    /// Height reference and its rate at step `i`: the commanded height plus
    /// a parabolic bump over flight phases.
    pub fn height_reference(&self, params: &RobotParams, i: i64) -> (f64, f64) {
        let cmd = self.command_at(i);
        match self.flight_run(i) {
            Some((a, b)) => {
                let dt = self.dt();
                let duration = (b - a) as f64 * dt;
                let apex = cmd
                    .apex
                    .unwrap_or(params.gravity.norm() * duration * duration / 8.0);
                let s = (i - a) as f64 / (b - a) as f64;
                (
                    cmd.height + 4.0 * apex * s * (1.0 - s),
                    4.0 * apex * (1.0 - 2.0 * s) / duration,
                )
            }
            None => (cmd.height, 0.0),
        }
    }
}

/// Ground reaction force reference: body weight shared equally among stance
/// feet, vertical, and zero for swing feet.
pub fn grf_reference(params: &RobotParams, s: &ContactFlags) -> [Vector3<f64>; NUM_LEGS] {
    let n = s.stance_count();
    if n == 0 {
        return [Vector3::zeros(); NUM_LEGS];
    }
    let fz = params.weight() / n as f64;
    std::array::from_fn(|j| {
        if s.0[j] {
            Vector3::new(0.0, 0.0, fz)
        } else {
            Vector3::zeros()
        }
    })
}

/// Default Raibert gain `√(h / |g|)` at the standing height.
pub fn default_raibert_gain(params: &RobotParams) -> f64 {
    (params.standing_height / params.gravity.norm()).sqrt()
}

/// Foothold relative to the CoM in the heading frame:
/// hip projection + `(T_st / 2) v + k_r (v − v_cmd)`, on the ground plane.
pub fn raibert_target(
    params: &RobotParams,
    leg: LegIndex,
    v_now: &Vector3<f64>,
    v_cmd: &Vector3<f64>,
    stance_duration: f64,
    gain: f64,
) -> Vector3<f64> {
    let hip = params.hip_offsets[leg.index()];
    let r = hip + v_now * (stance_duration / 2.0) + (v_now - v_cmd) * gain;
    Vector3::new(r.x, r.y, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceConfig {
    /// Raibert velocity-feedback gain; defaults to `√(h / |g|)`.
    #[serde(default)]
    pub raibert_gain: Option<f64>,
}

/// Per-step references over a planning window of `N` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    /// Schedule step of window column 0.
    pub start_step: i64,
    pub flags: Vec<ContactFlags>,
    /// `[θ; p; ω; v]` references at steps `0..=N`.
    pub body: Vec<SVector<f64, BODY_DIM>>,
    /// Swing joint reference of each leg.
    pub joints: [Vector3<f64>; NUM_LEGS],
    /// World-frame foothold target of the stance run that covers each step
    /// `0..=N` (or the next stance run, for swing steps).
    pub footholds: Vec<[Vector3<f64>; NUM_LEGS]>,
    /// Force reference at steps `0..N`.
    pub grf: Vec<[Vector3<f64>; NUM_LEGS]>,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.grf.len()
    }

    /// State-shaped reference at step `k` for contact flags `s`.
    pub fn state(&self, k: usize, s: &ContactFlags) -> HkdState {
        let mut x = HkdState::zeros();
        x.0.fixed_rows_mut::<BODY_DIM>(0).copy_from(&self.body[k]);
        for leg in LegIndex::ALL {
            let v = if s.in_stance(leg) {
                self.footholds[k][leg.index()]
            } else {
                self.joints[leg.index()]
            };
            x.set_leg(leg, v);
        }
        x
    }
}

fn heading(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Build references for the `horizon_steps` window starting at the step
/// containing `t0`, anchored at the measured state `x_now`.
pub fn generate_reference(
    params: &RobotParams,
    script: &MotionScript,
    t0: f64,
    horizon_steps: usize,
    x_now: &HkdState,
    config: &ReferenceConfig,
) -> ReferenceTrajectory {
    let dt = script.dt();
    let schedule = &script.schedule;
    let k0 = schedule.step_at(t0).max(0);
    let n = horizon_steps;
    let gain = config.raibert_gain.unwrap_or_else(|| default_raibert_gain(params));

    let mut body = Vec::with_capacity(n + 1);
    let mut pos = x_now.position();
    let mut yaw = x_now.euler()[2];
    let mut velocity_cmd = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let i = k0 + k as i64;
        let cmd = script.command_at(i);
        let v_cmd = heading(yaw) * Vector3::new(cmd.vx, cmd.vy, 0.0);
        let (z, vz) = script.height_reference(params, i);
        let mut b = SVector::<f64, BODY_DIM>::zeros();
        b[THETA + 2] = yaw;
        b[POSITION] = pos.x;
        b[POSITION + 1] = pos.y;
        b[POSITION + 2] = z;
        b[OMEGA + 2] = cmd.yaw_rate;
        b[VELOCITY] = v_cmd.x;
        b[VELOCITY + 1] = v_cmd.y;
        b[VELOCITY + 2] = vz;
        body.push(b);
        velocity_cmd.push(v_cmd);
        pos += v_cmd * dt;
        yaw += cmd.yaw_rate * dt;
    }

    let v_now = x_now.velocity();
    let current = schedule.flags(k0);
    let mut footholds = vec![[Vector3::zeros(); NUM_LEGS]; n + 1];
    for leg in LegIndex::ALL {
        let j = leg.index();
        let mut k = 0usize;
        while k <= n {
            let i = k0 + k as i64;
            let (a, b) = schedule.contact_run(leg, i, LOOKAHEAD_STEPS);
            let run_end = ((b - k0) as usize).min(n + 1);
            let target = if schedule.flags(i).in_stance(leg) {
                if a <= k0 && current.in_stance(leg) {
                    // The foothold is already fixed.
                    x_now.leg(leg)
                } else {
                    let td = ((a - k0).max(0) as usize).min(n);
                    let stance = (b - a) as f64 * dt;
                    let b_ref = &body[td];
                    let offset = raibert_target(params, leg, &v_now, &velocity_cmd[td], stance, gain);
                    let hip = Vector3::new(b_ref[POSITION], b_ref[POSITION + 1], 0.0);
                    hip + heading(b_ref[THETA + 2]) * offset
                }
            } else {
                // Swing steps carry the target of the next stance run.
                let td = b;
                let (_, b2) = schedule.contact_run(leg, td, LOOKAHEAD_STEPS);
                let stance = (b2 - td) as f64 * dt;
                let idx = ((td - k0) as usize).min(n);
                let b_ref = &body[idx];
                let offset = raibert_target(params, leg, &v_now, &velocity_cmd[idx], stance, gain);
                let hip = Vector3::new(b_ref[POSITION], b_ref[POSITION + 1], 0.0);
                hip + heading(b_ref[THETA + 2]) * offset
            };
            for f in footholds.iter_mut().take(run_end).skip(k) {
                f[j] = target;
            }
            k = run_end;
        }
    }

    let flags: Vec<ContactFlags> = (0..n as i64).map(|k| schedule.flags(k0 + k)).collect();
    let grf = flags.iter().map(|s| grf_reference(params, s)).collect();
    ReferenceTrajectory {
        start_step: k0,
        flags,
        body,
        joints: params.default_joint_angles,
        footholds,
        grf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(segments: &[(GaitSpec, MotionCommand)]) -> MotionScript {
        MotionScript::new(segments, 0.01).unwrap()
    }

    #[test]
    fn stance_force_reference_shares_weight() {
        let mut p = RobotParams::a1();
        p.mass = 12.0;
        let f = grf_reference(&p, &ContactFlags::STANCE);
        for v in f {
            assert!((v.z - 29.43).abs() < 1e-12);
            assert_eq!((v.x, v.y), (0.0, 0.0));
        }
        let f = grf_reference(&p, &ContactFlags([true, false, false, true]));
        assert!((f[0].z - 12.0 * 9.81 / 2.0).abs() < 1e-12);
        assert_eq!(f[1], Vector3::zeros());
        assert_eq!(grf_reference(&p, &ContactFlags::FLIGHT), [Vector3::zeros(); 4]);
    }

    #[test]
    fn raibert_cases() {
        let p = RobotParams::a1();
        let z = Vector3::zeros();
        let r = raibert_target(&p, LegIndex::FrontLeft, &z, &z, 0.18, 0.17);
        let hip = p.hip_offsets[1];
        assert_eq!(r, Vector3::new(hip.x, hip.y, 0.0));
        let v = Vector3::new(0.5, 0.0, 0.0);
        let r = raibert_target(&p, LegIndex::FrontLeft, &v, &v, 0.18, 0.17);
        assert!((r.x - hip.x - 0.045).abs() < 1e-15);
        let r = raibert_target(&p, LegIndex::HindRight, &Vector3::new(0.3, 0.2, 0.7), &z, 0.2, 0.1);
        assert_eq!(r.z, 0.0);
    }

    #[test]
    fn standing_reference_is_constant() {
        let p = RobotParams::a1();
        let s = script(&[(GaitSpec::stand(1.0), MotionCommand::new(0.26, 0.0, 0.0))]);
        let mut x = HkdState::standing(&p, 0.26);
        x.set_position(Vector3::new(0.3, -0.1, 0.25));
        let r = generate_reference(&p, &s, 0.0, 50, &x, &ReferenceConfig::default());
        for b in &r.body {
            assert_eq!(b[POSITION], 0.3);
            assert_eq!(b[POSITION + 1], -0.1);
            assert_eq!(b[POSITION + 2], 0.26);
            assert_eq!(b.fixed_rows::<3>(THETA).norm(), 0.0);
        }
        // Feet already on the ground keep their footholds.
        for leg in LegIndex::ALL {
            assert_eq!(r.footholds[0][leg.index()], x.leg(leg));
        }
    }

    #[test]
    fn forward_command_integrates_position() {
        let p = RobotParams::a1();
        let s = script(&[(GaitSpec::trot(1.08), MotionCommand::new(0.28, 0.5, 0.0))]);
        let x = HkdState::standing(&p, 0.28);
        let r = generate_reference(&p, &s, 0.0, 50, &x, &ReferenceConfig::default());
        assert!((r.body[50][POSITION] - 0.25).abs() < 1e-12);
        for k in 0..50 {
            assert!((r.body[k + 1][POSITION] - r.body[k][POSITION] - 0.005).abs() < 1e-12);
        }
    }

    #[test]
    fn flight_bump_peaks_mid_flight() {
        let p = RobotParams::a1();
        let mut jump = MotionCommand::new(0.28, 0.0, 0.0);
        jump.apex = Some(0.1);
        let s = script(&[(GaitSpec::stand(0.2), MotionCommand::new(0.28, 0.0, 0.0)), (GaitSpec::jump(0.2, 0.2), jump), (GaitSpec::stand(0.5), MotionCommand::new(0.28, 0.0, 0.0))]);
        let w = s.flight_windows();
        assert_eq!(w.len(), 1);
        assert!((w[0].0 - 0.4).abs() < 1e-12 && (w[0].1 - 0.6).abs() < 1e-12);
        let (z, vz) = s.height_reference(&p, 50);
        assert!((z - 0.38).abs() < 1e-12);
        assert!(vz.abs() < 1e-12);
        assert_eq!(s.height_reference(&p, 40).0, 0.28);
        assert_eq!(s.height_reference(&p, 60).0, 0.28);
    }
}
