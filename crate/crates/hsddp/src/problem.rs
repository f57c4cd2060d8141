use nalgebra::{SMatrix, SVector};

pub type Vector<const N: usize> = SVector<f64, N>;
pub type Matrix<const R: usize, const C: usize> = SMatrix<f64, R, C>;

/// Second-order expansion of a stage cost around `(x, u)`.
#[derive(Debug, Clone)]
pub struct StageCost<const NX: usize, const NU: usize> {
    pub value: f64,
    pub lx: Vector<NX>,
    pub lu: Vector<NU>,
    pub lxx: Matrix<NX, NX>,
    pub luu: Matrix<NU, NU>,
    pub lux: Matrix<NU, NX>,
}

impl<const NX: usize, const NU: usize> StageCost<NX, NU> {
    pub fn zero() -> Self {
        Self {
            value: 0.0,
            lx: Vector::zeros(),
            lu: Vector::zeros(),
            lxx: Matrix::zeros(),
            luu: Matrix::zeros(),
            lux: Matrix::zeros(),
        }
    }
}

/// Second-order expansion of a phase-terminal cost.
#[derive(Debug, Clone)]
pub struct TerminalCost<const NX: usize> {
    pub value: f64,
    pub lx: Vector<NX>,
    pub lxx: Matrix<NX, NX>,
}

impl<const NX: usize> TerminalCost<NX> {
    pub fn zero() -> Self {
        Self {
            value: 0.0,
            lx: Vector::zeros(),
            lxx: Matrix::zeros(),
        }
    }
}

/// A scalar equality constraint `g(x) = 0` evaluated at a phase end.
///
/// `key` identifies the constraint across solves so that its multiplier can
/// be carried over when the planning window moves.
#[derive(Debug, Clone)]
pub struct EqualityConstraint<const NX: usize> {
    pub key: u64,
    pub value: f64,
    pub grad: Vector<NX>,
}

/// A multi-phase discrete-time optimal control problem with known switching
/// times.
///
/// Step `k` integrates the state `x[k]` (already reset, if a phase ended at
/// `k`) to the pre-reset state at `k + 1`. Phase ends at `k` in `1..N` apply
/// [`Problem::reset`]; terminal costs and equality constraints are evaluated
/// on the pre-reset state at every phase end and at `N`.
pub trait Problem<const NX: usize, const NU: usize> {
    type Error: std::error::Error + Send + Sync + 'static;

    fn horizon(&self) -> usize;

    fn initial_state(&self) -> Vector<NX>;

    fn step(&self, k: usize, x: &Vector<NX>, u: &Vector<NU>) -> Result<Vector<NX>, Self::Error>;

    fn step_jacobians(
        &self,
        k: usize,
        x: &Vector<NX>,
        u: &Vector<NU>,
    ) -> Result<(Matrix<NX, NX>, Matrix<NX, NU>), Self::Error>;

    fn running_cost(&self, k: usize, x: &Vector<NX>, u: &Vector<NU>) -> StageCost<NX, NU>;

    /// Value-only evaluation used by the line search.
    fn running_cost_value(&self, k: usize, x: &Vector<NX>, u: &Vector<NU>) -> f64 {
        self.running_cost(k, x, u).value
    }

    /// Whether a phase ends (and a reset map applies) at interior step `k`.
    fn is_phase_end(&self, _k: usize) -> bool {
        false
    }

    fn reset(&self, _k: usize, x: &Vector<NX>) -> Vector<NX> {
        *x
    }

    fn reset_jacobian(&self, _k: usize, _x: &Vector<NX>) -> Matrix<NX, NX> {
        Matrix::identity()
    }

    /// Phase-terminal cost at a phase end or at the horizon end.
    fn terminal_cost(&self, k: usize, x: &Vector<NX>) -> TerminalCost<NX>;

    fn terminal_cost_value(&self, k: usize, x: &Vector<NX>) -> f64 {
        self.terminal_cost(k, x).value
    }

    /// Equality constraints at a phase end or at the horizon end.
    fn equality_constraints(&self, _k: usize, _x: &Vector<NX>) -> Vec<EqualityConstraint<NX>> {
        Vec::new()
    }
}
