use std::collections::BTreeMap;

use crate::problem::{Matrix, Vector};

/// Augmented-Lagrangian bookkeeping for phase-terminal equality constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct AlState {
    /// Multiplier per constraint key. Missing keys have a zero multiplier.
    pub multipliers: BTreeMap<u64, f64>,
    pub sigma: f64,
    pub sigma0: f64,
    pub growth: f64,
    pub sigma_max: f64,
}

impl AlState {
    pub fn new(sigma0: f64, growth: f64, sigma_max: f64) -> Self {
        Self {
            multipliers: BTreeMap::new(),
            sigma: sigma0,
            sigma0,
            growth,
            sigma_max,
        }
    }

    pub fn from_options(options: &SolverOptions) -> Self {
        Self::new(options.sigma0, options.sigma_growth, options.sigma_max)
    }

    pub fn multiplier(&self, key: u64) -> f64 {
        self.multipliers.get(&key).copied().unwrap_or(0.0)
    }

    /// Penalty `λ g + σ g² / 2` for one constraint value.
    pub fn penalty(&self, key: u64, g: f64) -> f64 {
        self.multiplier(key) * g + 0.5 * self.sigma * g * g
    }

    /// First-order multiplier update followed by penalty growth.
    pub fn update(&mut self, residuals: &[(u64, f64)]) {
        for &(key, g) in residuals {
            let lambda = self.multiplier(key) + self.sigma * g;
            self.multipliers.insert(key, lambda);
        }
        self.sigma = (self.sigma * self.growth).min(self.sigma_max);
    }

    /// Keep multipliers for surviving constraints, drop the rest and reset the
    /// penalty to its initial value.
    pub fn reinitialize(&self, surviving: impl IntoIterator<Item = u64>) -> Self {
        let multipliers = surviving
            .into_iter()
            .filter_map(|key| self.multipliers.get(&key).map(|&l| (key, l)))
            .collect();
        Self {
            multipliers,
            sigma: self.sigma0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Total DDP iterations (backward + forward sweep) across all outer loops.
    pub max_iterations: usize,
    /// DDP iterations per augmented-Lagrangian outer loop.
    pub max_inner_iterations: usize,
    pub max_outer_iterations: usize,
    /// Step sizes tried in order by the line search.
    pub line_search: Vec<f64>,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_growth: f64,
    /// Inner loop stops when the predicted decrease falls below
    /// `cost_tol * (1 + |J|)`.
    pub cost_tol: f64,
    /// Outer loop stops once every equality residual is below this.
    pub constraint_tol: f64,
    pub sigma0: f64,
    pub sigma_growth: f64,
    pub sigma_max: f64,
    /// Rollouts whose state norm exceeds this are rejected as diverged.
    pub max_state_norm: f64,
    /// Apply the previous feedback gains in the first rollout of a warm start.
    pub feedback_warm_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            max_inner_iterations: 20,
            max_outer_iterations: 10,
            line_search: (0..10).map(|i| 0.5f64.powi(i)).collect(),
            reg_init: 0.0,
            reg_min: 1e-8,
            reg_max: 1e10,
            reg_growth: 10.0,
            cost_tol: 1e-9,
            constraint_tol: 1e-4,
            sigma0: 10.0,
            sigma_growth: 10.0,
            sigma_max: 1e8,
            max_state_norm: 1e4,
            feedback_warm_start: true,
        }
    }
}

impl SolverOptions {
    /// Options for a replan: same tolerances, smaller iteration budget.
    pub fn replan(&self, iterations: usize) -> Self {
        Self {
            max_iterations: iterations,
            max_inner_iterations: 1,
            max_outer_iterations: iterations,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("max_iterations", self.max_iterations as f64),
            ("max_inner_iterations", self.max_inner_iterations as f64),
            ("max_outer_iterations", self.max_outer_iterations as f64),
            ("reg_min", self.reg_min),
            ("reg_max", self.reg_max),
            ("reg_growth", self.reg_growth - 1.0),
            ("sigma0", self.sigma0),
            ("sigma_growth", self.sigma_growth),
            ("constraint_tol", self.constraint_tol),
            ("max_state_norm", self.max_state_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.sigma_max < self.sigma0 {
            return Err("sigma_max must be at least sigma0".into());
        }
        if self.line_search.is_empty()
            || self.line_search.iter().any(|&a| !(a > 0.0 && a <= 1.0))
        {
            return Err("line search steps must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// A rollout: states after resets, pre-reset states at phase ends, controls
/// and the augmented cost.
#[derive(Debug, Clone)]
pub struct Trajectory<const NX: usize, const NU: usize> {
    pub xs: Vec<Vector<NX>>,
    /// `Some` at interior phase ends and at `N`.
    pub pre_reset: Vec<Option<Vector<NX>>>,
    pub us: Vec<Vector<NU>>,
    /// Running + terminal cost, without constraint terms.
    pub objective: f64,
    /// Objective plus augmented-Lagrangian terms.
    pub cost: f64,
    /// `(key, g)` for every equality constraint.
    pub residuals: Vec<(u64, f64)>,
}

impl<const NX: usize, const NU: usize> Trajectory<NX, NU> {
    pub fn horizon(&self) -> usize {
        self.us.len()
    }

    pub fn max_violation(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, &(_, g)| m.max(g.abs()))
    }

    /// Recompute the augmented cost after the multipliers or penalty changed.
    pub fn reevaluate(&mut self, al: &AlState) {
        let penalty: f64 = self.residuals.iter().map(|&(key, g)| al.penalty(key, g)).sum();
        self.cost = self.objective + penalty;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Iteration budget exhausted; the solution is the best found.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Augmented-Lagrangian outer iteration this record belongs to.
    pub outer: usize,
    /// Augmented cost before and after the iteration, under the multipliers
    /// of the current outer iteration.
    pub cost_before: f64,
    pub cost: f64,
    pub violation: f64,
    pub alpha: f64,
    pub regularization: f64,
    pub expected_decrease: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct DdpSolution<const NX: usize, const NU: usize> {
    pub trajectory: Trajectory<NX, NU>,
    /// Gains of the law `u = u*[k] + K[k] (x - x*[k])`.
    pub gains: Vec<Matrix<NU, NX>>,
    pub al: AlState,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Augmented cost of the first rollout, before any iteration.
    pub initial_cost: f64,
    pub trace: Vec<IterationRecord>,
}

impl<const NX: usize, const NU: usize> DdpSolution<NX, NU> {
    pub fn xs(&self) -> &[Vector<NX>] {
        &self.trajectory.xs
    }

    pub fn us(&self) -> &[Vector<NU>] {
        &self.trajectory.us
    }

    pub fn cost(&self) -> f64 {
        self.trajectory.cost
    }

    pub fn max_violation(&self) -> f64 {
        self.trajectory.max_violation()
    }

    /// True when no iteration increased the augmented cost it was minimizing.
    pub fn is_monotone(&self) -> bool {
        self.trace.iter().all(|r| r.cost <= r.cost_before)
    }
}
