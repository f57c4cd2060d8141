//! Artifacts of a single-window solve.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use hkd_core::cost::grf_residuals;
use hkd_core::dynamics::{ControlInput, HkdState};
use hkd_core::mpc::Plan;
use hkd_core::problem::HkdProblem;
use hkd_core::robot::{LegIndex, NUM_LEGS};
use hkd_core::scenario::Scenario;
use nalgebra::Vector3;

/// Standing state in the scheduled modes at `t`, moving at the commanded
/// velocity.
pub fn nominal_state(s: &Scenario, t: f64) -> HkdState {
    let cmd = s.script.command_at(s.script.schedule.step_at(t));
    let mut x = HkdState::standing_in_mode(&s.params, cmd.height, &s.script.schedule.flags_at_time(t));
    x.set_velocity(Vector3::new(cmd.vx, cmd.vy, 0.0));
    x
}

pub struct SolveReport<'a> {
    plan: &'a Plan,
    /// Smallest friction-cone residual per step (`+inf` with no stance leg).
    friction: Vec<f64>,
}

impl<'a> SolveReport<'a> {
    pub fn new(s: &Scenario, problem: &HkdProblem<'_>, plan: &'a Plan) -> Self {
        let friction = plan
            .solution
            .us()
            .iter()
            .enumerate()
            .map(|(k, u)| {
                grf_residuals(&ControlInput(*u), &problem.flags(k), s.params.friction)
                    .into_iter()
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Self { plan, friction }
    }

    pub fn min_friction(&self) -> f64 {
        self.friction.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `k,t,x0..x23,u0..u23,contacts`; the last row has no control.
    fn trajectory_csv(&self) -> String {
        let p = self.plan;
        let mut out = String::from("k,t");
        for i in 0..24 {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..24 {
            let _ = write!(out, ",u{i}");
        }
        out.push_str(",contacts\n");
        let (xs, us) = (p.solution.xs(), p.solution.us());
        for (k, x) in xs.iter().enumerate() {
            let _ = write!(out, "{k},{}", p.t0 + k as f64 * p.dt);
            for v in x.iter() {
                let _ = write!(out, ",{v}");
            }
            for i in 0..24 {
                match us.get(k) {
                    Some(u) => {
                        let _ = write!(out, ",{}", u[i]);
                    }
                    None => out.push(','),
                }
            }
            let flags = p.reference.flags.get(k).map(|f| f.to_string()).unwrap_or_default();
            let _ = writeln!(out, ",{flags}");
        }
        out
    }

    fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,outer,cost_before,cost,violation,alpha,regularization,expected_decrease,accepted\n");
        for (i, r) in self.plan.solution.trace.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{}",
                r.outer, r.cost_before, r.cost, r.violation, r.alpha, r.regularization, r.expected_decrease, r.accepted
            );
        }
        out
    }

    /// Touchdown residuals (m) by constraint, then the smallest friction-cone
    /// residual (N) of every step.
    fn constraints_csv(&self) -> String {
        let p = self.plan;
        let start = p.reference.start_step;
        let mut out = String::from("kind,step,leg,value\n");
        for (key, value) in &p.solution.trajectory.residuals {
            let leg = LegIndex::ALL[(*key % NUM_LEGS as u64) as usize];
            let step = (*key / NUM_LEGS as u64) as i64 - start;
            let _ = writeln!(out, "touchdown,{step},{leg},{value}");
        }
        for (k, r) in self.friction.iter().enumerate().filter(|(_, r)| r.is_finite()) {
            let _ = writeln!(out, "friction,{k},,{r}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trajectory.csv"), self.trajectory_csv())?;
        fs::write(dir.join("trace.csv"), self.trace_csv())?;
        fs::write(dir.join("constraints.csv"), self.constraints_csv())?;
        Ok(())
    }
}
