use crate::error::SolverError;
use crate::problem::{Matrix, Problem, Vector};
use crate::solution::{AlState, DdpSolution, IterationRecord, SolveStatus, SolverOptions, Trajectory};
use crate::sweep::{backward_sweep, forward_sweep, rollout, BackwardPass, Update};

/// Starting point of a solve.
#[derive(Debug, Clone)]
pub enum InitialGuess<const NX: usize, const NU: usize> {
    /// Open-loop control sequence.
    Controls(Vec<Vector<NU>>),
    /// Nominal trajectory and gains; the first rollout applies
    /// `u = u*[k] + K[k] (x - x*[k])`.
    Feedback {
        xs: Vec<Vector<NX>>,
        us: Vec<Vector<NU>>,
        gains: Vec<Matrix<NU, NX>>,
    },
}

fn first_rollout<P, const NX: usize, const NU: usize>(
    problem: &P,
    guess: &InitialGuess<NX, NU>,
    al: &AlState,
    max_state_norm: f64,
) -> Result<Trajectory<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    match guess {
        InitialGuess::Controls(us) => {
            if us.len() != problem.horizon() {
                return Err(SolverError::InvalidProblem(format!(
                    "initial guess has {} controls, horizon is {}",
                    us.len(),
                    problem.horizon()
                )));
            }
            rollout(problem, us, al, max_state_norm)
        }
        InitialGuess::Feedback { xs, us, gains } => {
            let nominal = Trajectory {
                xs: xs.clone(),
                pre_reset: vec![None; xs.len()],
                us: us.clone(),
                objective: 0.0,
                cost: 0.0,
                residuals: Vec::new(),
            };
            forward_sweep(
                problem,
                Update {
                    nominal: &nominal,
                    feedforward: None,
                    gains: Some(gains),
                    alpha: 0.0,
                },
                al,
                max_state_norm,
            )
        }
    }
}

struct Iteration<const NX: usize, const NU: usize> {
    backward: BackwardPass<NX, NU>,
    accepted: Option<(Trajectory<NX, NU>, f64)>,
}

/// One DDP iteration: backward sweep with increasing regularization until
/// Quu is positive definite, then a backtracking line search accepting any
/// decrease of the augmented cost. No step is taken when the predicted
/// decrease is below tolerance.
fn iterate<P, const NX: usize, const NU: usize>(
    problem: &P,
    trajectory: &Trajectory<NX, NU>,
    al: &AlState,
    regularization: &mut f64,
    options: &SolverOptions,
) -> Result<Iteration<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    let backward = loop {
        match backward_sweep(problem, trajectory, al, *regularization) {
            Ok(pass) => break pass,
            Err(SolverError::NonPositiveCurvature { step }) => {
                *regularization = (*regularization * options.reg_growth).max(options.reg_min);
                if *regularization > options.reg_max {
                    return Err(SolverError::NonPositiveCurvature { step });
                }
            }
            Err(e) => return Err(e),
        }
    };

    let mut accepted = None;
    let stationary =
        backward.expected_decrease(1.0) < options.cost_tol * (1.0 + trajectory.cost.abs());
    let schedule: &[f64] = if stationary { &[] } else { &options.line_search };
    for &alpha in schedule {
        let candidate = forward_sweep(
            problem,
            Update {
                nominal: trajectory,
                feedforward: Some(&backward.feedforward),
                gains: Some(&backward.gains),
                alpha,
            },
            al,
            options.max_state_norm,
        );
        match candidate {
            Ok(t) if t.cost.is_finite() && t.cost < trajectory.cost => {
                accepted = Some((t, alpha));
                break;
            }
            Ok(_) | Err(SolverError::RolloutDiverged { .. }) | Err(SolverError::Model(_)) => {}
            Err(e) => return Err(e),
        }
    }

    if accepted.is_some() || stationary {
        *regularization /= options.reg_growth;
        if *regularization < options.reg_min {
            *regularization = 0.0;
        }
    } else {
        *regularization = (*regularization * options.reg_growth).max(options.reg_min);
    }
    Ok(Iteration { backward, accepted })
}

/// Augmented-Lagrangian outer loop around DDP inner iterations.
///
/// Inner iterations stop on a small predicted decrease or when the inner or
/// total iteration budget is spent; multipliers are then updated with
/// `λ ← λ + σ g` and the penalty grows geometrically. Running out of budget
/// is reported through [`SolveStatus::NotConverged`], not as an error.
pub fn solve<P, const NX: usize, const NU: usize>(
    problem: &P,
    guess: InitialGuess<NX, NU>,
    mut al: AlState,
    options: &SolverOptions,
) -> Result<DdpSolution<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    options.validate().map_err(SolverError::InvalidProblem)?;
    let n = problem.horizon();
    if n == 0 {
        return Err(SolverError::InvalidProblem("horizon must be positive".into()));
    }

    let mut trajectory = first_rollout(problem, &guess, &al, options.max_state_norm)?;
    let initial_cost = trajectory.cost;
    let mut gains = match guess {
        InitialGuess::Feedback { gains, .. } if gains.len() == n => gains,
        _ => vec![Matrix::zeros(); n],
    };
    let mut regularization = options.reg_init;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut status = SolveStatus::NotConverged;

    'outer: for outer in 0..options.max_outer_iterations {
        let mut inner_converged = false;
        for _ in 0..options.max_inner_iterations {
            if iterations >= options.max_iterations {
                break;
            }
            iterations += 1;
            let cost_before = trajectory.cost;
            let step = iterate(problem, &trajectory, &al, &mut regularization, options)?;
            let expected = step.backward.expected_decrease(1.0);
            let small = expected < options.cost_tol * (1.0 + trajectory.cost.abs());
            gains = step.backward.gains;
            let alpha = step.accepted.as_ref().map_or(0.0, |(_, a)| *a);
            let accepted = step.accepted.is_some();
            if let Some((t, _)) = step.accepted {
                trajectory = t;
            }
            trace.push(IterationRecord {
                outer,
                cost_before,
                cost: trajectory.cost,
                violation: trajectory.max_violation(),
                alpha,
                regularization: step.backward.regularization,
                expected_decrease: expected,
                accepted,
            });
            if small {
                inner_converged = true;
                break;
            }
        }

        let violation = trajectory.max_violation();
        if inner_converged && violation < options.constraint_tol {
            status = SolveStatus::Converged;
            break 'outer;
        }
        if violation >= options.constraint_tol {
            al.update(&trajectory.residuals);
            trajectory.reevaluate(&al);
        }
        if iterations >= options.max_iterations {
            break;
        }
    }

    Ok(DdpSolution {
        trajectory,
        gains,
        al,
        iterations,
        status,
        initial_cost,
        trace,
    })
}

/// Shift a previous solution by `shift` steps, holding the final entries.
pub fn shifted_guess<const NX: usize, const NU: usize>(
    prev: &DdpSolution<NX, NU>,
    shift: usize,
    horizon: usize,
) -> InitialGuess<NX, NU> {
    fn shift_vec<T: Clone>(v: &[T], shift: usize, len: usize) -> Vec<T> {
        (0..len).map(|k| v[(k + shift).min(v.len() - 1)].clone()).collect()
    }
    InitialGuess::Feedback {
        xs: shift_vec(&prev.trajectory.xs, shift, horizon + 1),
        us: shift_vec(&prev.trajectory.us, shift, horizon),
        gains: shift_vec(&prev.gains, shift, horizon),
    }
}

/// First rollout of a warm-started replan, with or without the previous
/// feedback gains.
pub fn warm_start_rollout<P, const NX: usize, const NU: usize>(
    prev: &DdpSolution<NX, NU>,
    problem: &P,
    shift: usize,
    use_feedback: bool,
    al: &AlState,
    max_state_norm: f64,
) -> Result<Trajectory<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    let guess = match shifted_guess(prev, shift, problem.horizon()) {
        InitialGuess::Feedback { us, .. } if !use_feedback => InitialGuess::Controls(us),
        g => g,
    };
    first_rollout(problem, &guess, al, max_state_norm)
}

/// Replan from a previous solution whose window started `shift` steps
/// earlier.
///
/// The previous controls, states and gains are shifted; multipliers of
/// constraints whose keys survive into the new window are kept, others start
/// at zero; the penalty restarts from `σ₀`.
pub fn warm_start_replan<P, const NX: usize, const NU: usize>(
    prev: &DdpSolution<NX, NU>,
    problem: &P,
    shift: usize,
    options: &SolverOptions,
    keys: impl IntoIterator<Item = u64>,
) -> Result<DdpSolution<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    let al = prev.al.reinitialize(keys);
    let guess = match shifted_guess(prev, shift, problem.horizon()) {
        InitialGuess::Feedback { us, .. } if !options.feedback_warm_start => {
            InitialGuess::Controls(us)
        }
        g => g,
    };
    solve(problem, guess, al, options)
}
