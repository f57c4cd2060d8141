use nalgebra::Cholesky;

use crate::error::SolverError;
use crate::problem::{Matrix, Problem, Vector};
use crate::solution::{AlState, Trajectory};

/// Result of one backward sweep.
#[derive(Debug, Clone)]
pub struct BackwardPass<const NX: usize, const NU: usize> {
    pub feedforward: Vec<Vector<NU>>,
    pub gains: Vec<Matrix<NU, NX>>,
    /// `Σ kᵀ Qu` and `½ Σ kᵀ Quu k` over the horizon.
    pub dv: (f64, f64),
    /// Value-function gradient and Hessian at the initial state.
    pub value_gradient: Vector<NX>,
    pub value_hessian: Matrix<NX, NX>,
    pub regularization: f64,
}

impl<const NX: usize, const NU: usize> BackwardPass<NX, NU> {
    /// Decrease of the augmented cost predicted by the quadratic model for
    /// step size `alpha`.
    pub fn expected_decrease(&self, alpha: f64) -> f64 {
        -(alpha * self.dv.0 + alpha * alpha * self.dv.1)
    }
}

/// Terminal cost plus augmented-Lagrangian terms at a phase end, evaluated on
/// the pre-reset state. Constraint curvature is the Gauss-Newton term
/// `σ ∇g ∇gᵀ`.
fn phase_end_expansion<P, const NX: usize, const NU: usize>(
    problem: &P,
    al: &AlState,
    k: usize,
    x: &Vector<NX>,
) -> (Vector<NX>, Matrix<NX, NX>)
where
    P: Problem<NX, NU> + ?Sized,
{
    let terminal = problem.terminal_cost(k, x);
    let mut vx = terminal.lx;
    let mut vxx = terminal.lxx;
    for c in problem.equality_constraints(k, x) {
        let weight = al.multiplier(c.key) + al.sigma * c.value;
        vx += c.grad * weight;
        vxx += c.grad * c.grad.transpose() * al.sigma;
    }
    (vx, vxx)
}

/// Riccati-like backward sweep of DDP over a multi-phase trajectory.
///
/// At interior phase ends the value function is pulled back through the reset
/// Jacobian and the phase-terminal terms are added. Dynamics second
/// derivatives are not used.
pub fn backward_sweep<P, const NX: usize, const NU: usize>(
    problem: &P,
    trajectory: &Trajectory<NX, NU>,
    al: &AlState,
    regularization: f64,
) -> Result<BackwardPass<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    let n = trajectory.horizon();
    let terminal_state = trajectory.pre_reset[n].as_ref().unwrap_or(&trajectory.xs[n]);
    let (mut vx, mut vxx) = phase_end_expansion(problem, al, n, terminal_state);

    let mut feedforward = vec![Vector::<NU>::zeros(); n];
    let mut gains = vec![Matrix::<NU, NX>::zeros(); n];
    let mut dv = (0.0, 0.0);
    let reg = Matrix::<NU, NU>::identity() * regularization;

    for k in (0..n).rev() {
        let x = &trajectory.xs[k];
        let u = &trajectory.us[k];
        let (a, b) = problem.step_jacobians(k, x, u).map_err(SolverError::Model)?;
        let l = problem.running_cost(k, x, u);

        let vxx_a = vxx * a;
        let vxx_b = vxx * b;
        let qx = l.lx + a.transpose() * vx;
        let qu = l.lu + b.transpose() * vx;
        let qxx = l.lxx + a.transpose() * vxx_a;
        let quu = l.luu + b.transpose() * vxx_b;
        let qux = l.lux + b.transpose() * vxx_a;

        let quu_reg = quu + reg;
        let chol = Cholesky::new(quu_reg).ok_or(SolverError::NonPositiveCurvature { step: k })?;
        let kff = -chol.solve(&qu);
        let kfb = -chol.solve(&qux);

        dv.0 += kff.dot(&qu);
        dv.1 += 0.5 * kff.dot(&(quu * kff));

        let kt_quu = kfb.transpose() * quu;
        vx = qx + kt_quu * kff + kfb.transpose() * qu + qux.transpose() * kff;
        let vxx_new = qxx + kt_quu * kfb + kfb.transpose() * qux + qux.transpose() * kfb;
        vxx = (vxx_new + vxx_new.transpose()) * 0.5;

        feedforward[k] = kff;
        gains[k] = kfb;

        if k > 0 && problem.is_phase_end(k) {
            let pre = trajectory.pre_reset[k]
                .as_ref()
                .expect("rollout stores pre-reset states at phase ends");
            let jac = problem.reset_jacobian(k, pre);
            vx = jac.transpose() * vx;
            vxx = jac.transpose() * vxx * jac;
            let (tx, txx) = phase_end_expansion(problem, al, k, pre);
            vx += tx;
            vxx += txx;
        }
    }

    Ok(BackwardPass {
        feedforward,
        gains,
        dv,
        value_gradient: vx,
        value_hessian: vxx,
        regularization,
    })
}

/// Feedforward/feedback update applied during a forward sweep.
#[derive(Debug, Clone, Copy)]
pub struct Update<'a, const NX: usize, const NU: usize> {
    pub nominal: &'a Trajectory<NX, NU>,
    pub feedforward: Option<&'a [Vector<NU>]>,
    pub gains: Option<&'a [Matrix<NU, NX>]>,
    pub alpha: f64,
}

/// Forward rollout from the problem's initial state with the control law
/// `u[k] = u*[k] + α du[k] + K[k] (x[k] - x*[k])`, applying reset maps at
/// phase ends and accumulating the augmented cost.
pub fn forward_sweep<P, const NX: usize, const NU: usize>(
    problem: &P,
    update: Update<'_, NX, NU>,
    al: &AlState,
    max_state_norm: f64,
) -> Result<Trajectory<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    let n = problem.horizon();
    let nominal = update.nominal;
    if nominal.us.len() != n || nominal.xs.len() != n + 1 {
        return Err(SolverError::InvalidProblem(format!(
            "nominal trajectory has {} controls, horizon is {n}",
            nominal.us.len()
        )));
    }
    let mut xs = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n);
    let mut pre_reset = vec![None; n + 1];
    let mut objective = 0.0;
    let mut penalty = 0.0;
    let mut residuals = Vec::new();

    let mut x = problem.initial_state();
    for k in 0..n {
        if k > 0 && problem.is_phase_end(k) {
            objective += problem.terminal_cost_value(k, &x);
            for c in problem.equality_constraints(k, &x) {
                penalty += al.penalty(c.key, c.value);
                residuals.push((c.key, c.value));
            }
            pre_reset[k] = Some(x);
            x = problem.reset(k, &x);
        }
        let mut u = nominal.us[k];
        if let Some(du) = update.feedforward {
            u += du[k] * update.alpha;
        }
        if let Some(gains) = update.gains {
            u += gains[k] * (x - nominal.xs[k]);
        }
        objective += problem.running_cost_value(k, &x, &u);
        let next = problem.step(k, &x, &u).map_err(SolverError::Model)?;
        xs.push(x);
        us.push(u);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > max_state_norm {
            return Err(SolverError::RolloutDiverged { step: k + 1 });
        }
        x = next;
    }
    objective += problem.terminal_cost_value(n, &x);
    for c in problem.equality_constraints(n, &x) {
        penalty += al.penalty(c.key, c.value);
        residuals.push((c.key, c.value));
    }
    pre_reset[n] = Some(x);
    xs.push(x);

    Ok(Trajectory {
        xs,
        pre_reset,
        us,
        objective,
        cost: objective + penalty,
        residuals,
    })
}

/// Open-loop rollout of a control sequence.
pub fn rollout<P, const NX: usize, const NU: usize>(
    problem: &P,
    us: &[Vector<NU>],
    al: &AlState,
    max_state_norm: f64,
) -> Result<Trajectory<NX, NU>, SolverError<P::Error>>
where
    P: Problem<NX, NU> + ?Sized,
{
    let n = problem.horizon();
    let nominal = Trajectory {
        xs: vec![Vector::zeros(); n + 1],
        pre_reset: vec![None; n + 1],
        us: us.to_vec(),
        objective: 0.0,
        cost: 0.0,
        residuals: Vec::new(),
    };
    forward_sweep(
        problem,
        Update {
            nominal: &nominal,
            feedforward: None,
            gains: None,
            alpha: 0.0,
        },
        al,
        max_state_norm,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_decrease_is_quadratic_in_step() {
        let pass = BackwardPass::<1, 1> {
            feedforward: vec![],
            gains: vec![],
            dv: (-4.0, 1.0),
            value_gradient: Vector::zeros(),
            value_hessian: Matrix::zeros(),
            regularization: 0.0,
        };
        assert_eq!(pass.expected_decrease(1.0), 3.0);
        assert_eq!(pass.expected_decrease(0.5), 1.75);
        assert_eq!(pass.expected_decrease(0.0), 0.0);
    }
}
