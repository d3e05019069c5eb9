//! Discrete-time LQR on the semidefinite cone.
//!
//! With `x = y y^T` the closed loop acts as `x -> (A+BK) x (A+BK)^T` and the
//! stage cost is `<Q + K^T R K, x>`. Factoring `R + B^T P B = L L^T` and
//! substituting `K_hat = L^T K`, the gain-dependent part of the Bellman map
//! splits into one rank-1 term per row of `K_hat`,
//!
//! ```text
//! k_i k_i^T + m_i k_i^T + k_i m_i^T,   M = L^{-1} B^T P A,
//! ```
//!
//! each minimized in the Loewner order by `k_i = -m_i` with value
//! `-m_i m_i^T`. Summing the blocks gives the Riccati recursion
//! `P' = Q + A^T P A - M^T M` and the gain `K = -L^{-T} M`.
//!
//! Closed-loop invertibility is not required; the update keeps the
//! semidefinite cone invariant without it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cone::{ConeTag, ValueObject, MEMBERSHIP_TOL};
use crate::engine::{fixed_point_solve, BlockProblem, ConvergenceTrace, SolveConfig};
use crate::error::{Error, Result};
use crate::linalg::{
    back_substitute_transpose, cholesky_factor, forward_substitute, max_abs, solve_linear,
    spectral_radius, symmetrize,
};

const INTAKE_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn checked_symmetric(name: &str, m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let asym = max_abs(&(&m - m.transpose()));
    if asym > INTAKE_SYMMETRY_TOL * max_abs(&m).max(1.0) {
        return Err(Error::InvalidProblem(format!(
            "{name} is not symmetric (asymmetry {asym:e})"
        )));
    }
    Ok(symmetrize(&m))
}

impl LqrProblem {
    /// Accepts `Q > 0, R >= 0`, or `Q >= 0, R > 0` (with a warning, since
    /// `Q + K^T R K > 0` then depends on the optimal gain).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::InvalidProblem("LQR needs at least one state".into()));
        }
        if a.ncols() != n {
            return Err(Error::NonSquare {
                rows: n,
                cols: a.ncols(),
            });
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "B is {:?}, expected ({n}, m) with m >= 1",
                b.shape()
            )));
        }
        let m = b.ncols();
        if q.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "Q is {:?}, expected ({n}, {n})",
                q.shape()
            )));
        }
        if r.shape() != (m, m) {
            return Err(Error::ShapeMismatch(format!(
                "R is {:?}, expected ({m}, {m})",
                r.shape()
            )));
        }
        if !a
            .iter()
            .chain(b.iter())
            .chain(q.iter())
            .chain(r.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidProblem("non-finite entry in LQR data".into()));
        }
        let q = checked_symmetric("Q", q)?;
        let r = checked_symmetric("R", r)?;
        let q_min = min_eigenvalue(&q);
        let r_min = min_eigenvalue(&r);
        let psd = -MEMBERSHIP_TOL;
        if q_min > 0.0 && r_min >= psd {
            // preferred intake
        } else if q_min >= psd && r_min > 0.0 {
            log::warn!(
                "Q is only semidefinite (min eigenvalue {q_min:e}); positivity of Q + K^T R K is checked at the optimum"
            );
        } else {
            return Err(Error::InvalidProblem(format!(
                "need Q > 0 and R >= 0, or Q >= 0 and R > 0 (min eigenvalues {q_min:e}, {r_min:e})"
            )));
        }
        Ok(Self { a, b, q, r })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * gain
    }
}

/// Factorization shared by every rank-1 block at one value matrix.
#[derive(Debug, Clone)]
pub struct RiccatiFactors {
    /// Cholesky factor of `R + B^T P B`.
    pub factor: DMatrix<f64>,
    /// `M = L^{-1} B^T P A`; row `i` is the block vector `m_i`.
    pub reduced: DMatrix<f64>,
}

impl RiccatiFactors {
    pub fn new(p: &LqrProblem, value: &DMatrix<f64>) -> Result<Self> {
        let bt_p = p.b.tr_mul(value);
        let inner = symmetrize(&(&p.r + &bt_p * &p.b));
        let factor = cholesky_factor(&inner)?;
        let reduced = forward_substitute(&factor, &(&bt_p * &p.a));
        Ok(Self { factor, reduced })
    }

    /// `K = -L^{-T} M`.
    pub fn gain(&self) -> DMatrix<f64> {
        -back_substitute_transpose(&self.factor, &self.reduced)
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiStep {
    pub value: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub factors: RiccatiFactors,
}

/// One decomposed Riccati update at `value`.
pub fn riccati_step(p: &LqrProblem, value: &DMatrix<f64>) -> Result<RiccatiStep> {
    if value.shape() != (p.n(), p.n()) {
        return Err(Error::ShapeMismatch(format!(
            "value matrix is {:?}, expected ({}, {})",
            value.shape(),
            p.n(),
            p.n()
        )));
    }
    let factors = RiccatiFactors::new(p, value)?;
    let mut next = symmetrize(&(&p.q + p.a.tr_mul(value) * &p.a));
    for row in factors.reduced.row_iter() {
        let m = row.transpose();
        next -= &m * m.transpose();
    }
    Ok(RiccatiStep {
        value: next,
        gain: factors.gain(),
        factors,
    })
}

/// Bellman map of an [`LqrProblem`]: one block per row of `K_hat`.
#[derive(Debug, Clone, Copy)]
pub struct LqrBellman<'a> {
    problem: &'a LqrProblem,
}

impl<'a> LqrBellman<'a> {
    pub fn new(problem: &'a LqrProblem) -> Self {
        Self { problem }
    }
}

fn psd_matrix(v: &ValueObject) -> Result<&DMatrix<f64>> {
    v.as_matrix().ok_or_else(|| Error::ConeMismatch {
        left: v.cone().to_string(),
        right: "psd".into(),
    })
}

impl BlockProblem for LqrBellman<'_> {
    type Shared = RiccatiFactors;
    /// Row `k_i` of `K_hat`.
    type Minimizer = DVector<f64>;

    fn cone(&self) -> ConeTag {
        ConeTag::Psd(self.problem.n())
    }

    fn n_blocks(&self) -> usize {
        self.problem.m()
    }

    fn prepare(&self, lambda: &ValueObject) -> Result<RiccatiFactors> {
        RiccatiFactors::new(self.problem, psd_matrix(lambda)?)
    }

    fn affine_part(&self, lambda: &ValueObject, _: &RiccatiFactors) -> Result<ValueObject> {
        let p = self.problem;
        let value = psd_matrix(lambda)?;
        Ok(ValueObject::Psd(symmetrize(
            &(&p.q + p.a.tr_mul(value) * &p.a),
        )))
    }

    fn block_update(
        &self,
        block: usize,
        _: &ValueObject,
        shared: &RiccatiFactors,
    ) -> Result<(ValueObject, DVector<f64>)> {
        let m = shared.reduced.row(block).transpose();
        let contribution = -(&m * m.transpose());
        Ok((ValueObject::Psd(contribution), -m))
    }
}

#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub value: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub trace: ConvergenceTrace,
    pub stationarity_residual: f64,
    pub riccati_residual: f64,
    pub closed_loop_radius: f64,
}

/// Iterates the decomposed Riccati map from `P0 = Q` and certifies
/// `P > 0`, `rho(A + BK) < 1` and a Riccati residual below `10 * tol`.
///
/// The residual-growth window of `cfg` is ignored; see the body.
pub fn solve_lqr(p: &LqrProblem, cfg: &SolveConfig) -> Result<LqrSolution> {
    let map = LqrBellman::new(p);
    let start = ValueObject::psd(p.q.clone())?;
    // Iterates from Q only grow, and their steps legitimately grow for a long
    // while as unstable modes come under control. Unbounded growth still trips
    // the magnitude cap, so the residual-growth window is switched off.
    let cfg = SolveConfig {
        divergence_window: usize::MAX,
        ..*cfg
    };
    let fp = fixed_point_solve(&map, &start, &cfg)?;
    let value = psd_matrix(&fp.value)?.clone();

    let factors = RiccatiFactors::new(p, &value)?;
    let gain = factors.gain();

    let min_eig = min_eigenvalue(&value);
    if !(min_eig > 0.0) {
        return Err(Error::CertificationFailed(format!(
            "value matrix is not positive definite (min eigenvalue {min_eig:e})"
        )));
    }
    let rho = spectral_radius(&p.closed_loop(&gain))?;
    if rho >= 1.0 {
        return Err(Error::CertificationFailed(format!(
            "closed loop spectral radius {rho} is not below 1"
        )));
    }
    let residual = riccati_residual(p, &value)?;
    if residual >= 10.0 * cfg.tol {
        return Err(Error::CertificationFailed(format!(
            "Riccati residual {residual:e} exceeds {:e}",
            10.0 * cfg.tol
        )));
    }

    Ok(LqrSolution {
        value,
        gain,
        trace: fp.trace,
        stationarity_residual: fp.stationarity_residual,
        riccati_residual: residual,
        closed_loop_radius: rho,
    })
}

/// Sup-norm residual of the algebraic Riccati equation
/// `P = Q + A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A`, evaluated with
/// pivoted Gaussian elimination instead of the Cholesky path.
pub fn riccati_residual(p: &LqrProblem, value: &DMatrix<f64>) -> Result<f64> {
    let bt_p = p.b.tr_mul(value);
    let inner = &p.r + &bt_p * &p.b;
    let rhs = &bt_p * &p.a;
    let mut solved = DMatrix::zeros(p.m(), p.n());
    for col in 0..p.n() {
        let x = solve_linear(&inner, &rhs.column(col).into_owned())
            .ok_or(Error::SingularInnerMatrix)?;
        solved.set_column(col, &x);
    }
    let image = &p.q + p.a.tr_mul(value) * &p.a - rhs.transpose() * solved;
    Ok(max_abs(&(image - value)))
}

/// Value matrix of a fixed stabilizing gain: the solution of
/// `P = Q + K^T R K + (A+BK)^T P (A+BK)`, by doubling iteration.
pub fn gain_value(p: &LqrProblem, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gain.shape() != (p.m(), p.n()) {
        return Err(Error::ShapeMismatch(format!(
            "gain is {:?}, expected ({}, {})",
            gain.shape(),
            p.m(),
            p.n()
        )));
    }
    let mut phi = p.closed_loop(gain);
    let rho = spectral_radius(&phi)?;
    if rho >= 1.0 {
        return Err(Error::UnstableGain { rho });
    }
    let mut sum = symmetrize(&(&p.q + gain.tr_mul(&p.r) * gain));
    for _ in 0..200 {
        let increment = phi.tr_mul(&sum) * &phi;
        sum += &increment;
        if max_abs(&increment) <= 1e-12 * max_abs(&sum).max(1.0) {
            return Ok(symmetrize(&sum));
        }
        phi = &phi * &phi;
    }
    Err(Error::UnstableGain { rho })
}

/// Infinite-horizon cost `<P_K, x0>` of a stabilizing gain from the
/// semidefinite initial condition `x0` (use `y y^T` for a vector start).
pub fn cost_of_gain(p: &LqrProblem, gain: &DMatrix<f64>, x0: &DMatrix<f64>) -> Result<f64> {
    if x0.shape() != (p.n(), p.n()) {
        return Err(Error::ShapeMismatch(format!("x0 is {:?}", x0.shape())));
    }
    Ok(gain_value(p, gain)?.dot(x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> LqrProblem {
        LqrProblem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
        )
        .unwrap()
    }

    #[test]
    fn scalar_step() {
        let p = scalar(1.0, 1.0, 1.0, 1.0);
        let step = riccati_step(&p, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(step.factors.factor[(0, 0)], 2.0_f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(
            step.factors.reduced[(0, 0)],
            0.5_f64.sqrt(),
            epsilon = 1e-15
        );
        assert_relative_eq!(step.value[(0, 0)], 1.5, epsilon = 1e-15);
        assert_relative_eq!(step.gain[(0, 0)], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn step_without_input_is_lyapunov() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.7]);
        let p = LqrProblem::new(
            a.clone(),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let value = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let step = riccati_step(&p, &value).unwrap();
        let expected = DMatrix::identity(2, 2) + a.transpose() * &value * &a;
        assert!(max_abs(&(step.value - expected)) < 1e-14);
        assert!(step.gain.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_without_dynamics_returns_q() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = LqrProblem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            q.clone(),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let step = riccati_step(&p, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(step.value, q);
        assert!(step.gain.iter().all(|v| *v == 0.0));
        let sol = solve_lqr(&p, &SolveConfig::default()).unwrap();
        assert_eq!(sol.value, q);
    }

    #[test]
    fn golden_ratio() {
        let p = scalar(1.0, 1.0, 1.0, 1.0);
        let sol = solve_lqr(&p, &SolveConfig::default()).unwrap();
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert_relative_eq!(sol.value[(0, 0)], phi, epsilon = 1e-10);
        assert_relative_eq!(sol.gain[(0, 0)], -phi / (1.0 + phi), epsilon = 1e-10);
    }

    #[test]
    fn unstabilizable_diverges() {
        let p = scalar(2.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            solve_lqr(&p, &SolveConfig::default()),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn cost_of_gain_examples() {
        let p = scalar(0.5, 1.0, 1.0, 1.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_relative_eq!(
            cost_of_gain(&p, &DMatrix::zeros(1, 1), &one).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-12
        );
        let p = scalar(1.0, 1.0, 1.0, 1.0);
        let sol = solve_lqr(&p, &SolveConfig::default()).unwrap();
        assert_relative_eq!(
            cost_of_gain(&p, &sol.gain, &one).unwrap(),
            sol.value[(0, 0)],
            epsilon = 1e-10
        );
        assert!(matches!(
            cost_of_gain(&p, &DMatrix::zeros(1, 1), &one),
            Err(Error::UnstableGain { .. })
        ));
    }

    #[test]
    fn intake_conditions() {
        let bad = LqrProblem::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        );
        assert!(matches!(bad, Err(Error::InvalidProblem(_))));
        let asym = LqrProblem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(asym, Err(Error::InvalidProblem(_))));
        // semidefinite Q with definite R is accepted
        assert!(LqrProblem::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        )
        .is_ok());
    }
}
