//! Receding-horizon loop: replans at the MPC rate, leg control and plant
//! integration at the plant rate.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use hsddp::{solve, warm_start_replan, AlState, SolverError, SolverOptions};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostModel, CostWeights, RelaxedBarrier};
use crate::dynamics::{ContactFlags, ControlInput, HkdState, Integrator, ModelError, BODY_DIM, POSITION, VELOCITY};
use crate::mpc::leg::{
    clamp_to_cone, stance_torque, swing_foot_trajectory, swing_joint_targets, swing_joint_velocity, swing_torque,
};
use crate::mpc::log::{EventKind, RunLog, SolveRecord, TickRecord, TouchdownRecord};
use crate::mpc::plan::Plan;
use crate::mpc::plant::{step_plant, Disturbance, DivergenceBounds, PlantState, SimulationDiverged};
use crate::problem::HkdProblem;
use crate::reference::{generate_reference, MotionScript, ReferenceConfig, LOOKAHEAD_STEPS};
use crate::robot::{LegIndex, RobotParams, NUM_LEGS};

/// Solver settings of the first solve and of the replans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub cold_iterations: usize,
    pub replan_iterations: usize,
    pub feedback_warm_start: bool,
    pub sigma0: f64,
    pub sigma_growth: f64,
    pub sigma_max: f64,
    /// Touchdown residual below which the outer loop stops (m).
    pub constraint_tol: f64,
    pub cost_tol: f64,
    pub integrator: Integrator,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            cold_iterations: 100,
            replan_iterations: 3,
            feedback_warm_start: d.feedback_warm_start,
            sigma0: d.sigma0,
            sigma_growth: d.sigma_growth,
            sigma_max: d.sigma_max,
            constraint_tol: d.constraint_tol,
            cost_tol: d.cost_tol,
            integrator: Integrator::Euler,
        }
    }
}

impl SolverConfig {
    pub fn cold_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.cold_iterations,
            sigma0: self.sigma0,
            sigma_growth: self.sigma_growth,
            sigma_max: self.sigma_max,
            constraint_tol: self.constraint_tol,
            cost_tol: self.cost_tol,
            feedback_warm_start: self.feedback_warm_start,
            ..SolverOptions::default()
        }
    }

    pub fn replan_options(&self) -> SolverOptions {
        self.cold_options().replan(self.replan_iterations)
    }
}

/// Everything the planner needs besides the robot and the motion script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon_steps: usize,
    pub dt: f64,
    pub weights: CostWeights,
    pub barrier: RelaxedBarrier,
    pub solver: SolverConfig,
    pub reference: ReferenceConfig,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 50,
            dt: 0.01,
            weights: CostWeights::default(),
            barrier: RelaxedBarrier::default(),
            solver: SolverConfig::default(),
            reference: ReferenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Replan and plant steps alternate in one thread; the plan computed at
    /// an MPC tick is applied from that tick on. Bit-reproducible.
    #[default]
    Interleaved,
    /// Planner and plant run in separate threads, paced in real time,
    /// exchanging snapshots through single-slot mailboxes.
    Threaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub plant_rate: f64,
    pub mpc_rate: f64,
    pub mode: RunMode,
    pub seed: u64,
    /// Standard deviation of Gaussian noise on the measured body state.
    pub noise_std: f64,
    /// Swing apex above the chord between liftoff and target (m).
    pub swing_height: f64,
    /// Downward speed of a swing foot that is late for touchdown (m/s).
    pub late_descent_speed: f64,
    /// Foot height counted as contact once touchdown is due (m).
    pub contact_tolerance: f64,
    /// Run length; defaults to the motion script duration.
    pub duration: Option<f64>,
    pub integrator: Integrator,
    pub disturbances: Vec<Disturbance>,
    pub bounds: DivergenceBounds,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant_rate: 500.0,
            mpc_rate: 100.0,
            mode: RunMode::Interleaved,
            seed: 0,
            noise_std: 0.0,
            swing_height: 0.08,
            late_descent_speed: 0.5,
            contact_tolerance: 2e-3,
            duration: None,
            integrator: Integrator::Euler,
            disturbances: Vec::new(),
            bounds: DivergenceBounds::default(),
        }
    }
}

impl SimConfig {
    /// Plant steps per MPC period.
    pub fn ratio(&self) -> Result<usize, String> {
        if !(self.plant_rate > 0.0 && self.mpc_rate > 0.0) {
            return Err("rates must be positive".into());
        }
        if self.plant_rate < self.mpc_rate {
            return Err("plant rate must be at least the MPC rate".into());
        }
        let r = self.plant_rate / self.mpc_rate;
        if (r - r.round()).abs() > 1e-9 {
            return Err("MPC rate must divide the plant rate".into());
        }
        Ok(r.round() as usize)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Diverged(#[from] SimulationDiverged),
    #[error("solver failed at t = {time:.3} s: {source}")]
    Solver {
        time: f64,
        #[source]
        source: SolverError<ModelError>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A failed run with the log up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub log: RunLog,
    pub error: RunError,
}

/// Builds windows and solves them, keeping the previous plan for warm starts.
pub struct Planner<'a> {
    pub params: &'a RobotParams,
    pub script: &'a MotionScript,
    pub config: &'a MpcConfig,
    pub previous: Option<Plan>,
}

impl<'a> Planner<'a> {
    pub fn new(params: &'a RobotParams, script: &'a MotionScript, config: &'a MpcConfig) -> Self {
        Self {
            params,
            script,
            config,
            previous: None,
        }
    }

    pub fn problem(&self, x: &HkdState, t: f64) -> HkdProblem<'a> {
        let reference = generate_reference(
            self.params,
            self.script,
            t,
            self.config.horizon_steps,
            x,
            &self.config.reference,
        );
        let cost = CostModel {
            weights: self.config.weights.clone(),
            barrier: self.config.barrier,
            friction: self.params.friction,
            dt: self.config.dt,
        };
        HkdProblem::new(self.params, reference, cost, *x, self.config.solver.integrator)
    }

    /// Solve the window starting at `t` from the measured state `x`, whose
    /// leg slots must follow the scheduled modes at `t`. The first call is a
    /// cold solve; later calls warm start from the previous plan.
    pub fn replan(&mut self, x: &HkdState, t: f64) -> Result<Plan, SolverError<ModelError>> {
        let problem = self.problem(x, t);
        let start = Instant::now();
        let solver = &self.config.solver;
        let (solution, cold) = match &self.previous {
            None => {
                let options = solver.cold_options();
                let al = AlState::from_options(&options);
                let guess = problem.reference_guess(&al)?;
                (solve(&problem, guess, al, &options)?, true)
            }
            Some(prev) => {
                let shift = ((t - prev.t0) / self.config.dt).round().max(0.0) as usize;
                let options = solver.replan_options();
                let keys = problem.constraint_keys();
                (warm_start_replan(&prev.solution, &problem, shift, &options, keys)?, false)
            }
        };
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let t0 = self.script.schedule.start_time + problem.reference.start_step as f64 * self.config.dt;
        let plan = Plan::new(solution, problem.reference, t0, self.config.dt, wall_ms, cold);
        self.previous = Some(plan.clone());
        Ok(plan)
    }
}

/// Leg-level commands of one plant step.
struct Commands {
    u: ControlInput,
    torque: [Vector3<f64>; NUM_LEGS],
}

struct Loop<'a> {
    params: &'a RobotParams,
    script: &'a MotionScript,
    sim: &'a SimConfig,
    plant: PlantState,
    log: RunLog,
    dt: f64,
    pending: Vec<Disturbance>,
    saturated: [bool; NUM_LEGS],
    rng: ChaCha8Rng,
}

impl<'a> Loop<'a> {
    fn new(params: &'a RobotParams, script: &'a MotionScript, sim: &'a SimConfig, name: &str) -> Self {
        let flags = script.schedule.flags_at_time(script.schedule.start_time);
        let cmd = script.command_at(0);
        let mut x = HkdState::standing_in_mode(params, cmd.height, &flags);
        x.set_velocity(Vector3::new(cmd.vx, cmd.vy, 0.0));
        let dt = 1.0 / sim.plant_rate;
        let mut pending = sim.disturbances.clone();
        pending.sort_by(|a, b| b.time.total_cmp(&a.time));
        Self {
            params,
            script,
            sim,
            plant: PlantState::new(params, x, flags),
            log: RunLog {
                scenario: name.to_string(),
                plant_dt: dt,
                ..RunLog::default()
            },
            dt,
            pending,
            saturated: [false; NUM_LEGS],
            rng: ChaCha8Rng::seed_from_u64(sim.seed),
        }
    }

    fn scheduled(&self, t: f64) -> ContactFlags {
        self.script.schedule.flags_at_time(t)
    }

    fn step_time(&self, k: i64) -> f64 {
        self.script.schedule.start_time + k as f64 * self.script.dt()
    }

    /// Detected touchdowns, scheduled takeoffs and due disturbances. A swing
    /// foot lands when it reaches the ground, or comes within the contact
    /// tolerance once its touchdown is due.
    fn events(&mut self, t: f64, first: bool) {
        let now = self.scheduled(t);
        let before = if first { now } else { self.scheduled(t - self.dt) };
        for leg in LegIndex::ALL {
            if !self.plant.contacts.in_stance(leg) {
                let foot = self.plant.foot_position(self.params, leg);
                let z = foot.z;
                let (phase, scheduled) = self.swing_timing(leg, t);
                let due = now.in_stance(leg) || phase >= 1.0;
                if (z <= 0.0 && phase >= 0.5) || (due && z <= self.sim.contact_tolerance) {
                    self.log.touchdowns.push(TouchdownRecord {
                        t,
                        leg,
                        foot,
                        target: self.plant.swing_target[leg.index()],
                        scheduled,
                    });
                    self.plant.touchdown(self.params, leg);
                    self.log.event(t, EventKind::Touchdown, Some(leg), format!("foot height {z:.4}"));
                }
            }
        }
        for leg in LegIndex::ALL {
            if before.in_stance(leg) && !now.in_stance(leg) {
                let was_down = self.plant.contacts.in_stance(leg);
                self.plant.takeoff(self.params, leg, t);
                if was_down {
                    self.log.event(t, EventKind::Takeoff, Some(leg), "");
                }
            }
        }
        while self.pending.last().is_some_and(|d| d.time <= t + 1e-12) {
            let d = self.pending.pop().expect("checked");
            d.apply(&mut self.plant.x);
            self.log.event(
                t,
                EventKind::Disturbance,
                None,
                format!("omega {:?} velocity {:?}", d.omega, d.velocity),
            );
        }
    }

    /// Swing phase of `leg` at `t` and the scheduled touchdown time of the
    /// current swing.
    fn swing_timing(&self, leg: LegIndex, t: f64) -> (f64, f64) {
        let schedule = &self.script.schedule;
        let k = schedule.step_at(t);
        let (a, b) = schedule.contact_run(leg, k, LOOKAHEAD_STEPS);
        let touchdown = if schedule.flags(k).in_stance(leg) {
            self.step_time(a)
        } else {
            self.step_time(b)
        };
        let lift = self.plant.liftoff_time[leg.index()];
        let duration = (touchdown - lift).max(self.dt);
        ((t - lift) / duration, touchdown)
    }

    fn measure(&mut self, t: f64) -> HkdState {
        let mut x = self.plant.observe(self.params, &self.scheduled(t));
        if self.sim.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.sim.noise_std).expect("finite std");
            for i in 0..BODY_DIM {
                x.0[i] += normal.sample(&mut self.rng);
            }
        }
        x
    }

    fn commands(&mut self, plan: &Plan, t: f64) -> Commands {
        let params = self.params;
        let planned = plan.flags_at(t);
        let mut u = ControlInput::zeros();
        let mut torque = [Vector3::zeros(); NUM_LEGS];
        for leg in LegIndex::ALL {
            let j = leg.index();
            let q = self.plant.joint_angles(params, leg);
            let tau = if self.plant.contacts.in_stance(leg) {
                let force = if planned.in_stance(leg) {
                    clamp_to_cone(&plan.feedback_force(leg, t, &self.plant.x), params.friction)
                } else {
                    Vector3::zeros()
                };
                u.set_force(leg, force);
                stance_torque(params, &self.plant.x, leg, &q, &force)
            } else {
                let (phase, touchdown) = self.swing_timing(leg, t);
                if phase < 1.0 {
                    // Flat ground.
                    self.plant.swing_target[j] = Vector3::new(plan.targets[j].x, plan.targets[j].y, 0.0);
                }
                let target = self.plant.swing_target[j];
                let (foot, velocity) = if phase < 1.0 {
                    let duration = touchdown - self.plant.liftoff_time[j];
                    swing_foot_trajectory(
                        &self.plant.liftoff[j],
                        &target,
                        phase,
                        self.sim.swing_height,
                        duration.max(self.dt),
                    )
                } else {
                    let v = self.sim.late_descent_speed;
                    (target - Vector3::new(0.0, 0.0, v * (t - touchdown)), Vector3::new(0.0, 0.0, -v))
                };
                let (q_des, qd_des) = match swing_joint_targets(params, &self.plant.x, leg, &foot, &velocity) {
                    Ok(r) => {
                        self.plant.q_des[j] = r.0;
                        r
                    }
                    Err(e) => {
                        self.log.event(t, EventKind::IkFailure, Some(leg), e.to_string());
                        (self.plant.q_des[j], Vector3::zeros())
                    }
                };
                u.set_joint_velocity(leg, swing_joint_velocity(params, &q, &q_des, &qd_des));
                swing_torque(params, &q, &self.plant.joint_velocity[j], &q_des, &qd_des)
            };
            if tau.saturated && !self.saturated[j] {
                log::warn!("t = {t:.3}: {leg} torque saturated");
                self.log.event(t, EventKind::TorqueSaturation, Some(leg), format!("{:?}", tau.tau));
            }
            self.saturated[j] = tau.saturated;
            torque[j] = tau.tau;
        }
        Commands { u, torque }
    }

    fn record_solve(&mut self, plan: &Plan, t: f64) {
        let s = &plan.solution;
        self.log.solves.push(SolveRecord {
            t,
            wall_ms: plan.wall_ms,
            iterations: s.iterations,
            cost: s.cost(),
            violation: s.max_violation(),
            converged: plan.converged(),
            cold: plan.cold,
        });
        if !plan.converged() {
            log::debug!("t = {t:.3}: replan stopped after {} iterations", s.iterations);
            self.log.event(
                t,
                EventKind::NotConverged,
                None,
                format!("{} iterations, violation {:.2e}", s.iterations, s.max_violation()),
            );
        }
    }

    /// Leg control and one plant step under `plan`.
    fn tick(&mut self, plan: &Plan, t: f64) -> Result<(), SimulationDiverged> {
        let c = self.commands(plan, t);
        let k = plan_index(plan, t);
        self.log.ticks.push(TickRecord {
            t,
            x: self.plant.x,
            u: c.u,
            torque: c.torque,
            contacts: self.plant.contacts,
            plan_t0: plan.t0,
            z_ref: plan.reference.body[k][POSITION + 2],
            vx_ref: plan.reference.body[k][VELOCITY],
        });
        step_plant(self.params, &mut self.plant, &c.u, self.dt, self.sim.integrator, &self.sim.bounds, t)
    }

    fn fail(mut self, error: RunError, t: f64) -> RunFailure {
        log::error!("run stopped at t = {t:.3}: {error}");
        self.log.event(t, EventKind::Divergence, None, error.to_string());
        RunFailure { log: self.log, error }
    }
}

fn plan_index(plan: &Plan, t: f64) -> usize {
    (((t - plan.t0) / plan.dt + 1e-9).floor().max(0.0) as usize).min(plan.horizon())
}

fn tick_count(script: &MotionScript, sim: &SimConfig) -> usize {
    (sim.duration.unwrap_or_else(|| script.duration()) * sim.plant_rate).round() as usize
}

/// Run the closed loop over the scenario duration.
pub fn run_closed_loop(
    params: &RobotParams,
    script: &MotionScript,
    mpc: &MpcConfig,
    sim: &SimConfig,
    name: &str,
) -> Result<RunLog, Box<RunFailure>> {
    let lp = Loop::new(params, script, sim, name);
    let ratio = match sim.ratio() {
        Ok(r) => r,
        Err(e) => {
            return Err(Box::new(RunFailure {
                log: lp.log,
                error: RunError::Config(e),
            }))
        }
    };
    match sim.mode {
        RunMode::Interleaved => run_interleaved(lp, mpc, ratio),
        RunMode::Threaded => run_threaded(lp, mpc, ratio),
    }
}

fn run_interleaved(mut lp: Loop<'_>, mpc: &MpcConfig, ratio: usize) -> Result<RunLog, Box<RunFailure>> {
    let mut planner = Planner::new(lp.params, lp.script, mpc);
    let start = lp.script.schedule.start_time;
    let mut plan: Option<Plan> = None;
    for i in 0..tick_count(lp.script, lp.sim) {
        let t = start + i as f64 * lp.dt;
        lp.events(t, i == 0);
        if i % ratio == 0 {
            let x = lp.measure(t);
            match planner.replan(&x, t) {
                Ok(p) => {
                    lp.record_solve(&p, t);
                    plan = Some(p);
                }
                Err(source) => return Err(Box::new(lp.fail(RunError::Solver { time: t, source }, t))),
            }
        }
        let p = plan.as_ref().expect("planned at tick 0");
        if let Err(e) = lp.tick(p, t) {
            let time = e.time;
            return Err(Box::new(lp.fail(e.into(), time)));
        }
    }
    Ok(lp.log)
}

/// Single-slot latest-value mailbox.
struct Mailbox<T> {
    slot: Mutex<(Option<T>, bool)>,
    ready: Condvar,
}

impl<T> Mailbox<T> {
    fn new() -> Self {
        Self {
            slot: Mutex::new((None, false)),
            ready: Condvar::new(),
        }
    }

    fn post(&self, v: T) {
        let mut s = self.slot.lock().expect("mailbox lock");
        s.0 = Some(v);
        self.ready.notify_all();
    }

    fn take(&self) -> Option<T> {
        self.slot.lock().expect("mailbox lock").0.take()
    }

    fn close(&self) {
        self.slot.lock().expect("mailbox lock").1 = true;
        self.ready.notify_all();
    }

    /// Block until a value is posted or the mailbox is closed.
    fn wait(&self) -> Option<T> {
        let mut s = self.slot.lock().expect("mailbox lock");
        loop {
            if let Some(v) = s.0.take() {
                return Some(v);
            }
            if s.1 {
                return None;
            }
            s = self.ready.wait(s).expect("mailbox lock");
        }
    }
}

type PlanResult = Result<Arc<Plan>, (f64, SolverError<ModelError>)>;

fn run_threaded(mut lp: Loop<'_>, mpc: &MpcConfig, ratio: usize) -> Result<RunLog, Box<RunFailure>> {
    let start = lp.script.schedule.start_time;
    let mut planner = Planner::new(lp.params, lp.script, mpc);
    // The first plan is needed before the plant can move.
    lp.events(start, true);
    let x = lp.measure(start);
    let mut plan = match planner.replan(&x, start) {
        Ok(p) => Arc::new(p),
        Err(source) => return Err(Box::new(lp.fail(RunError::Solver { time: start, source }, start))),
    };
    lp.record_solve(&plan, start);

    let states: Mailbox<(f64, HkdState)> = Mailbox::new();
    let plans: Mailbox<PlanResult> = Mailbox::new();
    let n = tick_count(lp.script, lp.sim);
    std::thread::scope(|scope| {
        scope.spawn(|| {
            while let Some((t, x)) = states.wait() {
                let out = planner.replan(&x, t).map(Arc::new).map_err(|e| (t, e));
                let failed = out.is_err();
                plans.post(out);
                if failed {
                    break;
                }
            }
        });
        let clock = Instant::now();
        let result = (|| {
            for i in 0..n {
                let t = start + i as f64 * lp.dt;
                let due = Duration::from_secs_f64(t - start);
                if let Some(wait) = due.checked_sub(clock.elapsed()) {
                    std::thread::sleep(wait);
                }
                if i > 0 {
                    lp.events(t, false);
                }
                match plans.take() {
                    Some(Ok(p)) => {
                        lp.record_solve(&p, p.t0);
                        plan = p;
                    }
                    Some(Err((time, source))) => return Err(RunError::Solver { time, source }),
                    None => {}
                }
                if i % ratio == 0 && i > 0 {
                    states.post((t, lp.measure(t)));
                }
                lp.tick(&plan, t).map_err(RunError::from)?;
            }
            Ok(())
        })();
        states.close();
        match result {
            Ok(()) => Ok(lp.log),
            Err(e) => {
                let t = lp.log.ticks.last().map_or(start, |r| r.t);
                Err(Box::new(lp.fail(e, t)))
            }
        }
    })
}
