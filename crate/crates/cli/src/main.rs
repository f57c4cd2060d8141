//! `hkd-mpc`: run scenarios, solve single windows and summarize solve times.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hkd_core::mpc::ablation::{feedback_ablation, next_touchdown};
use hkd_core::mpc::log::read_telemetry_times;
use hkd_core::mpc::{run_closed_loop, Planner, RunError, RunMode};
use hkd_core::scenario::Scenario;
use hkd_core::stats::{render_table, SolveStats};

#[derive(Parser)]
#[command(name = "hkd-mpc", version, about = "Hybrid kinodynamic MPC for quadrupeds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop run of a scenario; writes logs, telemetry and statistics.
    Run {
        /// Bundled scenario name or path to a scenario file.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// DDP iterations per replan.
        #[arg(long)]
        replan_iters: Option<usize>,
        /// Warm start replans from the previous controls only.
        #[arg(long)]
        no_feedback_warmstart: bool,
        /// Run planner and plant in separate threads, paced in real time.
        #[arg(long)]
        threaded: bool,
    },
    /// Cold solve of one window; writes trajectory, trace and constraint report.
    SolveOnce {
        scenario: String,
        /// Window start time (s).
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve-time table from telemetry files, one row per file.
    Stats {
        #[arg(required = true)]
        telemetry: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll-rate kick at a touchdown: first rollout with and without feedback gains.
    Ablation {
        scenario: String,
        /// Touchdown time; defaults to the first touchdown after 0.1 s.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, default_value_t = 5.0)]
        omega_x: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Diverged(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Diverged(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Diverged(m) | Failure::Solver(m) => m,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn load(scenario: &str) -> Result<Scenario, Failure> {
    Scenario::resolve(scenario).map_err(|e| Failure::Config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            replan_iters,
            no_feedback_warmstart,
            threaded,
        } => run(&scenario, seed, out, replan_iters, no_feedback_warmstart, threaded),
        Command::SolveOnce { scenario, time, out } => solve_once(&scenario, time, out),
        Command::Stats { telemetry, out } => stats(&telemetry, out),
        Command::Ablation {
            scenario,
            time,
            omega_x,
            out,
        } => ablation(&scenario, time, omega_x, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(
    scenario: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
    replan_iters: Option<usize>,
    no_feedback_warmstart: bool,
    threaded: bool,
) -> Result<(), Failure> {
    let mut s = load(scenario)?;
    if let Some(seed) = seed {
        s.set_seed(seed);
    }
    if let Some(k) = replan_iters {
        if k == 0 {
            return Err(Failure::Config("--replan-iters must be positive".into()));
        }
        s.mpc.solver.replan_iterations = k;
    }
    if no_feedback_warmstart {
        s.mpc.solver.feedback_warm_start = false;
    }
    if threaded {
        s.sim.mode = RunMode::Threaded;
    }
    let dir = out.unwrap_or_else(|| s.output.clone());
    let (log, error) = match run_closed_loop(&s.params, &s.script, &s.mpc, &s.sim, &s.name) {
        Ok(log) => (log, None),
        Err(f) => (f.log, Some(f.error)),
    };
    log.write_artifacts(&dir).map_err(|e| io_error(&dir, e))?;
    let summary = log.summary();
    println!("{}: {} ticks, artifacts in {}", s.name, summary.ticks, dir.display());
    for f in &summary.flights {
        println!("flight {:.3}-{:.3} s ({:.3} s), apex {:.3} m", f.start, f.end, f.duration, f.apex);
    }
    println!("height rmse {:.4} m", summary.height_rmse);
    if let Some(st) = summary.solves {
        print!("{}", render_table(&[(s.name.clone(), st)]));
    }
    match error {
        None => Ok(()),
        Some(e @ RunError::Diverged(_)) => Err(Failure::Diverged(e.to_string())),
        Some(e @ RunError::Solver { .. }) => Err(Failure::Solver(e.to_string())),
        Some(e @ RunError::Config(_)) => Err(Failure::Config(e.to_string())),
    }
}

fn solve_once(scenario: &str, time: f64, out: Option<PathBuf>) -> Result<(), Failure> {
    let s = load(scenario)?;
    let start = s.script.schedule.start_time;
    if !(time >= start && time < s.script.duration()) {
        return Err(Failure::Config(format!("--time {time} is outside the scenario")));
    }
    let x = report::nominal_state(&s, time);
    let mut planner = Planner::new(&s.params, &s.script, &s.mpc);
    let problem = planner.problem(&x, time);
    let plan = planner.replan(&x, time).map_err(|e| Failure::Solver(e.to_string()))?;
    let dir = out.unwrap_or_else(|| s.output.join("solve_once"));
    let r = report::SolveReport::new(&s, &problem, &plan);
    r.write(&dir).map_err(|e| io_error(&dir, e))?;
    println!(
        "{}: {:?} after {} iterations in {:.1} ms, cost {:.6}, touchdown residual {:.2e} m, friction residual min {:.3e} N, monotone {}",
        s.name,
        plan.solution.status,
        plan.solution.iterations,
        plan.wall_ms,
        plan.solution.cost(),
        plan.solution.max_violation(),
        r.min_friction(),
        plan.solution.is_monotone()
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}

/// Row name of a telemetry file: its directory name, else its file stem.
fn task_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn stats(files: &[PathBuf], out: Option<PathBuf>) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let times = read_telemetry_times(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let st = SolveStats::from_samples(&times).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        rows.push((task_name(path), st));
    }
    let table = render_table(&rows);
    print!("{table}");
    if let Some(out) = out {
        std::fs::write(&out, &table).map_err(|e| io_error(&out, e))?;
    }
    Ok(())
}

fn ablation(scenario: &str, time: Option<f64>, omega_x: f64, out: Option<PathBuf>) -> Result<(), Failure> {
    let s = load(scenario)?;
    let time = match time {
        Some(t) => t,
        None => next_touchdown(&s.script, 0.1).ok_or_else(|| Failure::Config("the scenario has no touchdown".into()))?,
    };
    if time - s.mpc.dt < s.script.schedule.start_time {
        return Err(Failure::Config(format!("--time {time} leaves no window before it")));
    }
    let a = feedback_ablation(&s.params, &s.script, &s.mpc, time, omega_x, s.sim.bounds.max_state_norm)
        .map_err(|e| Failure::Solver(e.to_string()))?;
    let dir = out.unwrap_or_else(|| s.output.join("ablation"));
    std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let file = dir.join("ablation.csv");
    std::fs::write(&file, a.csv()).map_err(|e| io_error(&file, e))?;
    println!("{}: +{omega_x} rad/s roll rate at t = {time:.3} s, nominal cost {:.4}", s.name, a.nominal_cost);
    for (name, r) in [("feedback", &a.with_feedback), ("open loop", &a.without_feedback)] {
        match (&r.cost, &r.failure) {
            (Some(c), _) => println!("{name}: cost {c:.4}, max |omega_x| {:.3} rad/s", r.max_omega_x()),
            (None, Some(e)) => println!("{name}: {e}, max |omega_x| {:.3} rad/s", r.max_omega_x()),
            (None, None) => unreachable!("a rollout either has a cost or a failure"),
        }
    }
    println!("series in {}", file.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_come_from_the_directory() {
        assert_eq!(task_name(Path::new("out/run_jump_run/telemetry.csv")), "run_jump_run");
        assert_eq!(task_name(Path::new("/trot.csv")), "trot");
    }

    #[test]
    fn failures_map_to_exit_codes() {
        let codes: Vec<u8> = [Failure::Config(String::new()), Failure::Diverged(String::new()), Failure::Solver(String::new())]
            .iter()
            .map(Failure::code)
            .collect();
        assert_eq!(codes, [1, 2, 3]);
    }
}
