#![allow(dead_code)]

use std::convert::Infallible;

use hsddp::{EqualityConstraint, Matrix, Problem, StageCost, TerminalCost, Vector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Time-invariant linear dynamics with cost `Σ xᵀQx + uᵀRu + x_Nᵀ Qf x_N`,
/// optional interior phase end with a reset map and optional linear
/// equality constraints `C x_N = d`.
#[derive(Clone)]
pub struct LinearQuadratic<const NX: usize, const NU: usize> {
    pub a: Matrix<NX, NX>,
    pub b: Matrix<NX, NU>,
    pub q: Matrix<NX, NX>,
    pub r: Matrix<NU, NU>,
    pub qf: Matrix<NX, NX>,
    pub x0: Vector<NX>,
    pub n: usize,
    pub switch_at: Option<usize>,
    /// Reset `x⁺ = x + reset_quadratic * x[1]² e_0` at the switch.
    pub reset_quadratic: f64,
    pub terminal_eq: Vec<(Vector<NX>, f64)>,
}

impl<const NX: usize, const NU: usize> Problem<NX, NU> for LinearQuadratic<NX, NU> {
    type Error = Infallible;

    fn horizon(&self) -> usize {
        self.n
    }

    fn initial_state(&self) -> Vector<NX> {
        self.x0
    }

    fn step(&self, _k: usize, x: &Vector<NX>, u: &Vector<NU>) -> Result<Vector<NX>, Infallible> {
        Ok(self.a * x + self.b * u)
    }

    fn step_jacobians(
        &self,
        _k: usize,
        _x: &Vector<NX>,
        _u: &Vector<NU>,
    ) -> Result<(Matrix<NX, NX>, Matrix<NX, NU>), Infallible> {
        Ok((self.a, self.b))
    }

    fn running_cost(&self, _k: usize, x: &Vector<NX>, u: &Vector<NU>) -> StageCost<NX, NU> {
        StageCost {
            value: x.dot(&(self.q * x)) + u.dot(&(self.r * u)),
            lx: self.q * x * 2.0,
            lu: self.r * u * 2.0,
            lxx: self.q * 2.0,
            luu: self.r * 2.0,
            lux: Matrix::zeros(),
        }
    }

    fn is_phase_end(&self, k: usize) -> bool {
        self.switch_at == Some(k)
    }

    fn reset(&self, _k: usize, x: &Vector<NX>) -> Vector<NX> {
        let mut out = *x;
        out[0] += self.reset_quadratic * x[1] * x[1];
        out
    }

    fn reset_jacobian(&self, _k: usize, x: &Vector<NX>) -> Matrix<NX, NX> {
        let mut j = Matrix::identity();
        j[(0, 1)] += 2.0 * self.reset_quadratic * x[1];
        j
    }

    fn terminal_cost(&self, k: usize, x: &Vector<NX>) -> TerminalCost<NX> {
        if k == self.n {
            TerminalCost {
                value: x.dot(&(self.qf * x)),
                lx: self.qf * x * 2.0,
                lxx: self.qf * 2.0,
            }
        } else {
            TerminalCost::zero()
        }
    }

    fn equality_constraints(&self, k: usize, x: &Vector<NX>) -> Vec<EqualityConstraint<NX>> {
        if k != self.n {
            return Vec::new();
        }
        self.terminal_eq
            .iter()
            .enumerate()
            .map(|(i, (c, d))| EqualityConstraint {
                key: i as u64,
                value: c.dot(x) - d,
                grad: *c,
            })
            .collect()
    }
}

fn random_matrix<const R: usize, const C: usize>(rng: &mut ChaCha8Rng, scale: f64) -> Matrix<R, C> {
    Matrix::from_fn(|_, _| rng.random_range(-1.0..1.0) * scale)
}

fn random_spd<const N: usize>(rng: &mut ChaCha8Rng, floor: f64) -> Matrix<N, N> {
    let m: Matrix<N, N> = random_matrix(rng, 1.0);
    m.transpose() * m / N as f64 + Matrix::identity() * floor
}

pub fn random_lq<const NX: usize, const NU: usize>(seed: u64, n: usize) -> LinearQuadratic<NX, NU> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::<NX, NX>::identity() + random_matrix::<NX, NX>(&mut rng, 0.1 / (NX as f64).sqrt());
    LinearQuadratic {
        a,
        b: random_matrix(&mut rng, 0.5),
        q: random_spd(&mut rng, 0.1),
        r: random_spd(&mut rng, 0.5),
        qf: random_spd(&mut rng, 0.5),
        x0: Vector::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        n,
        switch_at: None,
        reset_quadratic: 0.0,
        terminal_eq: Vec::new(),
    }
}

/// Discrete Riccati recursion for `Σ xᵀQx + uᵀRu + x_Nᵀ Qf x_N`, written
/// with dynamically sized matrices. Returns gains `K[k]` (u = K x) and `P_0`.
pub fn riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    n: usize,
) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let mut p = qf.clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.ncols()); n];
    for k in (0..n).rev() {
        let s = r + b.transpose() * &p * b;
        let k_gain = -s.lu().solve(&(b.transpose() * &p * a)).expect("S invertible");
        p = q + a.transpose() * &p * a + a.transpose() * &p * b * &k_gain;
        p = (&p + p.transpose()) * 0.5;
        gains[k] = k_gain;
    }
    (gains, p)
}

pub fn to_dynamic<const R: usize, const C: usize>(m: &Matrix<R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Condensed KKT solve of the linear-quadratic problem with its terminal
/// equalities. Returns the stacked optimal controls.
pub fn kkt_controls<const NX: usize, const NU: usize>(p: &LinearQuadratic<NX, NU>) -> Vec<f64> {
    let n = p.n;
    let nu = NU;
    let a = to_dynamic(&p.a);
    let b = to_dynamic(&p.b);
    // x_k = Φ_k x0 + Γ_k U
    let mut phi = vec![DMatrix::<f64>::identity(NX, NX)];
    let mut gamma = vec![DMatrix::<f64>::zeros(NX, n * nu)];
    for k in 0..n {
        let next_phi = &a * &phi[k];
        let mut next_gamma = &a * &gamma[k];
        let mut block = next_gamma.view_mut((0, k * nu), (NX, nu));
        block += &b;
        phi.push(next_phi);
        gamma.push(next_gamma);
    }
    let x0 = DMatrix::from_column_slice(NX, 1, p.x0.as_slice());
    let q = to_dynamic(&p.q);
    let qf = to_dynamic(&p.qf);
    let r = to_dynamic(&p.r);
    let mut h = DMatrix::<f64>::zeros(n * nu, n * nu);
    let mut f = DMatrix::<f64>::zeros(n * nu, 1);
    for k in 0..=n {
        let w = if k == n { &qf } else { &q };
        h += gamma[k].transpose() * w * &gamma[k];
        f += gamma[k].transpose() * w * &phi[k] * &x0;
    }
    for k in 0..n {
        let mut block = h.view_mut((k * nu, k * nu), (nu, nu));
        block += &r;
    }
    let m = p.terminal_eq.len();
    let mut kkt = DMatrix::<f64>::zeros(n * nu + m, n * nu + m);
    let mut rhs = DMatrix::<f64>::zeros(n * nu + m, 1);
    kkt.view_mut((0, 0), (n * nu, n * nu)).copy_from(&(&h * 2.0));
    rhs.view_mut((0, 0), (n * nu, 1)).copy_from(&(&f * -2.0));
    for (i, (c, d)) in p.terminal_eq.iter().enumerate() {
        let c = DMatrix::from_row_slice(1, NX, c.as_slice());
        let row = &c * &gamma[n];
        kkt.view_mut((n * nu + i, 0), (1, n * nu)).copy_from(&row);
        kkt.view_mut((0, n * nu + i), (n * nu, 1)).copy_from(&row.transpose());
        rhs[(n * nu + i, 0)] = d - (&c * &phi[n] * &x0)[(0, 0)];
    }
    let sol = kkt.lu().solve(&rhs).expect("KKT system solvable");
    sol.rows(0, n * nu).iter().copied().collect()
}
