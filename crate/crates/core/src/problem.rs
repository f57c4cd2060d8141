//! The multi-phase optimal control problem solved at every replan.

use hsddp::{backward_sweep, AlState, EqualityConstraint, InitialGuess, Problem, SolverError, Trajectory};

use crate::cost::{touchdown_residual, CostModel, HkdStageCost, HkdTerminalCost, StageReference};
use crate::dynamics::{
    apply_transition, integrate_step, linearize_step, transition_jacobian, ContactFlags, ControlInput,
    ControlMatrix, ControlVector, HkdState, Integrator, ModelError, StateMatrix, StateVector,
};
use crate::reference::ReferenceTrajectory;
use crate::robot::{LegIndex, RobotParams, NUM_LEGS};

/// Multiplier key of the touchdown constraint of `leg` at absolute schedule
/// step `step`.
pub fn touchdown_key(step: i64, leg: LegIndex) -> u64 {
    step.max(0) as u64 * NUM_LEGS as u64 + leg.index() as u64
}

#[derive(Debug, Clone)]
pub struct HkdProblem<'a> {
    pub params: &'a RobotParams,
    pub reference: ReferenceTrajectory,
    pub cost: CostModel,
    pub x0: HkdState,
    pub integrator: Integrator,
}

impl<'a> HkdProblem<'a> {
    pub fn new(
        params: &'a RobotParams,
        reference: ReferenceTrajectory,
        cost: CostModel,
        x0: HkdState,
        integrator: Integrator,
    ) -> Self {
        Self {
            params,
            reference,
            cost,
            x0,
            integrator,
        }
    }

    pub fn flags(&self, k: usize) -> ContactFlags {
        self.reference.flags[k.min(self.reference.flags.len() - 1)]
    }

    pub fn dt(&self) -> f64 {
        self.cost.dt
    }

    fn stage_reference(&self, k: usize) -> StageReference {
        let s = self.flags(k);
        StageReference {
            state: self.reference.state(k, &s),
            grf: self.reference.grf[k],
        }
    }

    /// Reference for the pre-reset state at a phase end or at `N`: body
    /// reference at `k`, leg references of the phase that ends.
    fn terminal_reference(&self, k: usize) -> (HkdState, ContactFlags) {
        let s = self.flags(k - 1);
        let mut x = self.reference.state(k - 1, &s);
        x.0.fixed_rows_mut::<12>(0).copy_from(&self.reference.body[k]);
        (x, s)
    }

    /// Legs touching down at interior step `k`.
    pub fn touchdowns(&self, k: usize) -> impl Iterator<Item = LegIndex> + '_ {
        let valid = k >= 1 && k < self.horizon();
        LegIndex::ALL.into_iter().filter(move |leg| {
            valid && !self.flags(k - 1).in_stance(*leg) && self.flags(k).in_stance(*leg)
        })
    }

    /// Keys of every touchdown constraint in the window.
    pub fn constraint_keys(&self) -> Vec<u64> {
        (1..self.horizon())
            .flat_map(|k| {
                self.touchdowns(k)
                    .map(move |leg| touchdown_key(self.reference.start_step + k as i64, leg))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

impl HkdProblem<'_> {
    /// Cold-start guess: the reference itself as nominal trajectory, with the
    /// time-varying LQR gains of the cost linearized along it. The first
    /// rollout is then a feedback-stabilized tracking of the reference
    /// instead of an open-loop replay of the reference forces.
    pub fn reference_guess(&self, al: &AlState) -> Result<InitialGuess<24, 24>, SolverError<ModelError>> {
        let n = self.horizon();
        let xs: Vec<StateVector> = (0..=n).map(|k| self.reference.state(k, &self.flags(k)).0).collect();
        let us: Vec<ControlVector> = (0..n).map(|k| self.stage_reference(k).control()).collect();
        let pre_reset = (0..=n)
            .map(|k| (k == n || self.is_phase_end(k)).then(|| self.terminal_reference(k).0 .0))
            .collect();
        let nominal = Trajectory {
            xs,
            pre_reset,
            us,
            objective: 0.0,
            cost: 0.0,
            residuals: Vec::new(),
        };
        let pass = backward_sweep(self, &nominal, al, 0.0)?;
        Ok(InitialGuess::Feedback {
            xs: nominal.xs,
            us: nominal.us,
            gains: pass.gains,
        })
    }
}

impl Problem<24, 24> for HkdProblem<'_> {
    type Error = ModelError;

    fn horizon(&self) -> usize {
        self.reference.horizon()
    }

    fn initial_state(&self) -> StateVector {
        self.x0.0
    }

    fn step(&self, k: usize, x: &StateVector, u: &ControlVector) -> Result<StateVector, ModelError> {
        integrate_step(self.params, &HkdState(*x), &ControlInput(*u), &self.flags(k), self.dt(), self.integrator)
            .map(|x| x.0)
    }

    fn step_jacobians(
        &self,
        k: usize,
        x: &StateVector,
        u: &ControlVector,
    ) -> Result<(StateMatrix, ControlMatrix), ModelError> {
        linearize_step(self.params, &HkdState(*x), &ControlInput(*u), &self.flags(k), self.dt(), self.integrator)
    }

    fn running_cost(&self, k: usize, x: &StateVector, u: &ControlVector) -> HkdStageCost {
        self.cost
            .running_cost(&HkdState(*x), &ControlInput(*u), &self.stage_reference(k), &self.flags(k))
    }

    fn running_cost_value(&self, k: usize, x: &StateVector, u: &ControlVector) -> f64 {
        self.cost
            .running_cost_value(&HkdState(*x), &ControlInput(*u), &self.stage_reference(k), &self.flags(k))
    }

    fn is_phase_end(&self, k: usize) -> bool {
        k >= 1 && k < self.horizon() && self.flags(k) != self.flags(k - 1)
    }

    fn reset(&self, k: usize, x: &StateVector) -> StateVector {
        apply_transition(self.params, &HkdState(*x), &self.flags(k - 1), &self.flags(k))
            .expect("window flags define consistent resets")
            .0
    }

    fn reset_jacobian(&self, k: usize, x: &StateVector) -> StateMatrix {
        transition_jacobian(self.params, &HkdState(*x), &self.flags(k - 1), &self.flags(k))
    }

    fn terminal_cost(&self, k: usize, x: &StateVector) -> HkdTerminalCost {
        let (x_ref, s) = self.terminal_reference(k);
        self.cost.terminal_cost(&HkdState(*x), &x_ref, &s)
    }

    fn equality_constraints(&self, k: usize, x: &StateVector) -> Vec<EqualityConstraint<24>> {
        let state = HkdState(*x);
        self.touchdowns(k)
            .map(|leg| {
                let (value, grad) = touchdown_residual(self.params, &state, leg);
                EqualityConstraint {
                    key: touchdown_key(self.reference.start_step + k as i64, leg),
                    value,
                    grad,
                }
            })
            .collect()
    }
}
