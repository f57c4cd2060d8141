//! First rollout of a replan after an angular-velocity disturbance, with and
//! without the previous plan's feedback gains.

use hsddp::{warm_start_rollout, Problem, SolverError};
use nalgebra::Vector3;

use crate::dynamics::{HkdState, ModelError, OMEGA};
use crate::mpc::runtime::{MpcConfig, Planner};
use crate::reference::MotionScript;
use crate::robot::RobotParams;

/// One warm-started first rollout.
#[derive(Debug, Clone)]
pub struct AblationRollout {
    /// Cost of the rollout, or `None` if it diverged.
    pub cost: Option<f64>,
    /// Why the rollout stopped early.
    pub failure: Option<String>,
    /// Body roll rate per step, up to the last finite state.
    pub omega_x: Vec<f64>,
}

impl AblationRollout {
    pub fn diverged(&self) -> bool {
        self.cost.is_none()
    }

    pub fn max_omega_x(&self) -> f64 {
        self.omega_x.iter().fold(0.0, |m, w| m.max(w.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub time: f64,
    pub dt: f64,
    /// Cost of the undisturbed previous plan.
    pub nominal_cost: f64,
    pub with_feedback: AblationRollout,
    pub without_feedback: AblationRollout,
}

impl Ablation {
    /// `step,t,omega_x_feedback,omega_x_open_loop`; a diverged series leaves
    /// its column empty past the failure.
    pub fn csv(&self) -> String {
        let mut out = String::from("step,t,omega_x_feedback,omega_x_open_loop\n");
        let n = self.with_feedback.omega_x.len().max(self.without_feedback.omega_x.len());
        let cell = |v: &[f64], k: usize| v.get(k).map_or(String::new(), |w| w.to_string());
        for k in 0..n {
            out.push_str(&format!(
                "{k},{},{},{}\n",
                self.time + k as f64 * self.dt,
                cell(&self.with_feedback.omega_x, k),
                cell(&self.without_feedback.omega_x, k)
            ));
        }
        out
    }
}

/// First scheduled touchdown strictly after `t`.
pub fn next_touchdown(script: &MotionScript, t: f64) -> Option<f64> {
    let s = &script.schedule;
    let k0 = s.step_at(t) + 1;
    (k0..s.len() as i64).find_map(|k| {
        let (a, b) = (s.flags(k - 1), s.flags(k));
        (0..4).any(|j| !a.0[j] && b.0[j]).then(|| s.start_time + k as f64 * s.dt)
    })
}

/// Solve the window one MPC step before `time` from a nominal state, then
/// add `omega_x` to the roll rate of the plan's state at `time` and roll the
/// shifted plan forward over the new window, once with its feedback gains
/// and once with its controls alone.
pub fn feedback_ablation(
    params: &RobotParams,
    script: &MotionScript,
    mpc: &MpcConfig,
    time: f64,
    omega_x: f64,
    max_state_norm: f64,
) -> Result<Ablation, SolverError<ModelError>> {
    let dt = mpc.dt;
    let before = time - dt;
    let cmd = script.command_at(script.schedule.step_at(before));
    let mut x = HkdState::standing_in_mode(params, cmd.height, &script.schedule.flags_at_time(before));
    x.set_velocity(Vector3::new(cmd.vx, cmd.vy, 0.0));
    let mut planner = Planner::new(params, script, mpc);
    let plan = planner.replan(&x, before)?;
    let prev = &plan.solution;

    let mut x1 = prev.xs()[1];
    x1[OMEGA] += omega_x;
    let problem = planner.problem(&HkdState(x1), time);
    let al = prev.al.reinitialize(problem.constraint_keys());
    let run = |feedback: bool| {
        let omega = roll_rate_series(&problem, prev, feedback, max_state_norm);
        match warm_start_rollout(prev, &problem, 1, feedback, &al, max_state_norm) {
            Ok(t) => AblationRollout {
                cost: Some(t.cost),
                failure: None,
                omega_x: omega,
            },
            Err(e) => AblationRollout {
                cost: None,
                failure: Some(e.to_string()),
                omega_x: omega,
            },
        }
    };
    Ok(Ablation {
        time,
        dt,
        nominal_cost: prev.cost(),
        with_feedback: run(true),
        without_feedback: run(false),
    })
}

/// Roll rate along the shifted-plan rollout until the state leaves the
/// bound or the model fails.
fn roll_rate_series<P: Problem<24, 24>>(
    problem: &P,
    prev: &hsddp::DdpSolution<24, 24>,
    feedback: bool,
    max_state_norm: f64,
) -> Vec<f64> {
    let n = problem.horizon();
    let (xs, us) = (prev.xs(), prev.us());
    let mut x = problem.initial_state();
    let mut out = vec![x[OMEGA]];
    for k in 0..n {
        let j = (k + 1).min(us.len() - 1);
        let mut u = us[j];
        if feedback {
            u += prev.gains[j] * (x - xs[(k + 1).min(xs.len() - 1)]);
        }
        let Ok(mut next) = problem.step(k, &x, &u) else { break };
        if problem.is_phase_end(k + 1) {
            next = problem.reset(k + 1, &next);
        }
        if !next.iter().all(|v| v.is_finite()) || next.norm() > max_state_norm {
            break;
        }
        x = next;
        out.push(x[OMEGA]);
    }
    out
}
