//! Immutable snapshot of one MPC solution, queried by the leg controller.

use hsddp::{DdpSolution, SolveStatus};
use nalgebra::{SMatrix, SVector, Vector3};

use crate::dynamics::{grf, ContactFlags, ControlInput, HkdState, BODY_DIM};
use crate::reference::ReferenceTrajectory;
use crate::robot::{LegIndex, NUM_LEGS};

#[derive(Debug, Clone)]
pub struct Plan {
    pub solution: DdpSolution<24, 24>,
    pub reference: ReferenceTrajectory,
    /// Time of window column 0.
    pub t0: f64,
    pub dt: f64,
    /// Next foothold of every leg: the planned post-touchdown foothold of its
    /// next touchdown in the window, or the reference target beyond it.
    pub targets: [Vector3<f64>; NUM_LEGS],
    pub wall_ms: f64,
    pub cold: bool,
}

impl Plan {
    pub fn new(
        solution: DdpSolution<24, 24>,
        reference: ReferenceTrajectory,
        t0: f64,
        dt: f64,
        wall_ms: f64,
        cold: bool,
    ) -> Self {
        let targets = next_targets(&solution, &reference);
        Self {
            solution,
            reference,
            t0,
            dt,
            targets,
            wall_ms,
            cold,
        }
    }

    pub fn horizon(&self) -> usize {
        self.reference.horizon()
    }

    pub fn converged(&self) -> bool {
        self.solution.status == SolveStatus::Converged
    }

    /// Step index and interpolation fraction of time `t`, clamped to the
    /// window.
    fn locate(&self, t: f64) -> (usize, f64) {
        let s = ((t - self.t0) / self.dt).max(0.0);
        let n = self.horizon();
        // Tolerate round-off at step boundaries.
        let k = (s + 1e-9).floor() as usize;
        if k >= n {
            return (n - 1, 1.0);
        }
        (k, (s - k as f64).clamp(0.0, 1.0))
    }

    pub fn flags_at(&self, t: f64) -> ContactFlags {
        self.reference.flags[self.locate(t).0]
    }

    /// Planned body state `[θ; p; ω; v]` at `t`, linearly interpolated.
    pub fn body_at(&self, t: f64) -> SVector<f64, BODY_DIM> {
        let (k, a) = self.locate(t);
        let xs = self.solution.xs();
        let b0 = xs[k].fixed_rows::<BODY_DIM>(0);
        let b1 = xs[k + 1].fixed_rows::<BODY_DIM>(0);
        b0 * (1.0 - a) + b1 * a
    }

    /// Planned control, held over each step.
    pub fn control_at(&self, t: f64) -> ControlInput {
        ControlInput(self.solution.us()[self.locate(t).0])
    }

    /// Rows of the feedback gain that map body deviations to the force of
    /// `leg`.
    pub fn force_gain(&self, leg: LegIndex, t: f64) -> SMatrix<f64, 3, BODY_DIM> {
        let k = self.locate(t).0;
        self.solution.gains[k]
            .fixed_view::<3, BODY_DIM>(grf(leg.index()), 0)
            .into_owned()
    }

    /// `λ* + K_B (x_B − x*_B)` for `leg` at the measured state.
    pub fn feedback_force(&self, leg: LegIndex, t: f64, x: &HkdState) -> Vector3<f64> {
        let dx = x.body() - self.body_at(t);
        self.control_at(t).force(leg) + self.force_gain(leg, t) * dx
    }
}

fn next_targets(solution: &DdpSolution<24, 24>, reference: &ReferenceTrajectory) -> [Vector3<f64>; NUM_LEGS] {
    let flags = &reference.flags;
    let xs = solution.xs();
    std::array::from_fn(|j| {
        let leg = LegIndex::ALL[j];
        if let Some(k) = (1..flags.len()).find(|&k| !flags[k - 1].0[j] && flags[k].0[j]) {
            return HkdState(xs[k]).leg(leg);
        }
        match (0..flags.len()).find(|&k| !flags[k].0[j]) {
            Some(k) => reference.footholds[k][j],
            None => HkdState(xs[0]).leg(leg),
        }
    })
}
