//! Linearly solvable MDPs as a positive linear system.
//!
//! Transition matrices are column-stochastic: column `i` holds the
//! distribution of the next state when leaving state `i`, so `P[(j, i)]` is
//! the probability of `i -> j`. Goal states are absorbing and free. After the
//! goals are removed, the reduced passive dynamics `Pbar` (substochastic) and
//! the aggregated goal mass `pbar_g` define a Bellman equation that splits
//! per column:
//!
//! ```text
//! lambda_i = s_i + min_{p_i} p_i^T (log(p_i / pbar_i) + lambda) + pi_i(p_i)
//!          = s_i - log(pbar_i^T exp(-lambda) + pbar_g_i)
//! ```
//!
//! With `z = exp(-lambda)` and `G = diag(exp(-s))` this becomes the affine
//! system `z = G (Pbar^T z + pbar_g)`, solved directly. The minimizing
//! columns `p_i = pbar_i * z / (pbar_i^T z + pbar_g_i)` keep the sparsity of
//! `Pbar`.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::cone::{ConeTag, ValueObject};
use crate::engine::{BlockProblem, ConvergenceTrace, SolveConfig};
use crate::error::{Error, Result};
use crate::linalg::{solve_linear, spectral_radius, vec_max_abs};

/// Tolerance on column sums of transition matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LdpProblem {
    pbar: DMatrix<f64>,
    s: DVector<f64>,
    goals: Vec<usize>,
}

impl LdpProblem {
    /// Checks shapes, nonnegativity and column stochasticity. Goal
    /// conditions are checked by [`reduce`].
    pub fn new(pbar: DMatrix<f64>, s: DVector<f64>, goals: Vec<usize>) -> Result<Self> {
        let n = pbar.nrows();
        if n == 0 {
            return Err(Error::InvalidProblem("LDP needs at least one state".into()));
        }
        if pbar.ncols() != n {
            return Err(Error::NonSquare {
                rows: n,
                cols: pbar.ncols(),
            });
        }
        if s.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "s has length {}, expected {n}",
                s.len()
            )));
        }
        if pbar.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "Pbar entries must be finite and >= 0".into(),
            ));
        }
        for (i, col) in pbar.column_iter().enumerate() {
            let total: f64 = col.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidProblem(format!(
                    "column {i} of Pbar sums to {total}, expected 1"
                )));
            }
        }
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "s entries must be finite and >= 0".into(),
            ));
        }
        if let Some(g) = goals.iter().find(|g| **g >= n) {
            return Err(Error::InvalidProblem(format!("goal {g} out of range")));
        }
        let mut goals = goals;
        goals.sort_unstable();
        goals.dedup();
        Ok(Self { pbar, s, goals })
    }

    pub fn n(&self) -> usize {
        self.pbar.nrows()
    }

    pub fn pbar(&self) -> &DMatrix<f64> {
        &self.pbar
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn goals(&self) -> &[usize] {
        &self.goals
    }
}

/// Goal-free system: substochastic `pbar`, goal mass `pbar_g`, cost `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLdp {
    pbar: DMatrix<f64>,
    pbar_g: DVector<f64>,
    s: DVector<f64>,
    states: Vec<usize>,
}

impl ReducedLdp {
    /// Builds a reduced system directly; states are numbered `0..n_r`.
    /// Requires `1^T pbar_i + pbar_g_i = 1` and `s >= 0`.
    pub fn new(pbar: DMatrix<f64>, pbar_g: DVector<f64>, s: DVector<f64>) -> Result<Self> {
        let n = pbar.nrows();
        let states = (0..n).collect();
        Self::with_states(pbar, pbar_g, s, states)
    }

    fn with_states(
        pbar: DMatrix<f64>,
        pbar_g: DVector<f64>,
        s: DVector<f64>,
        states: Vec<usize>,
    ) -> Result<Self> {
        let n = pbar.nrows();
        if n == 0 {
            return Err(Error::InvalidProblem("reduced system has no states".into()));
        }
        if pbar.ncols() != n {
            return Err(Error::NonSquare {
                rows: n,
                cols: pbar.ncols(),
            });
        }
        if pbar_g.len() != n || s.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "pbar_g and s must have length {n} (got {} and {})",
                pbar_g.len(),
                s.len()
            )));
        }
        if pbar
            .iter()
            .chain(pbar_g.iter())
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidProblem(
                "transition mass must be finite and >= 0".into(),
            ));
        }
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "s entries must be finite and >= 0".into(),
            ));
        }
        for i in 0..n {
            let total = pbar.column(i).sum() + pbar_g[i];
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidProblem(format!(
                    "column {i}: retained plus goal mass is {total}, expected 1"
                )));
            }
        }
        Ok(Self {
            pbar,
            pbar_g,
            s,
            states,
        })
    }

    pub fn n(&self) -> usize {
        self.pbar.nrows()
    }

    pub fn pbar(&self) -> &DMatrix<f64> {
        &self.pbar
    }

    pub fn pbar_g(&self) -> &DVector<f64> {
        &self.pbar_g
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    /// Original index of each reduced state.
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// `G Pbar^T` with `G = diag(exp(-s))`.
    pub fn discounted_transpose(&self) -> DMatrix<f64> {
        let mut m = self.pbar.transpose();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row *= (-self.s[i]).exp();
        }
        m
    }

    /// `G pbar_g`.
    pub fn discounted_goal_mass(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            (0..self.n()).map(|i| (-self.s[i]).exp() * self.pbar_g[i]),
        )
    }
}

/// Removes the goal states after checking that they are absorbing, free and
/// reachable from every other state.
pub fn reduce(p: &LdpProblem) -> Result<ReducedLdp> {
    if p.goals.is_empty() {
        return Err(Error::NoGoal);
    }
    let n = p.n();
    let is_goal: Vec<bool> = (0..n).map(|i| p.goals.binary_search(&i).is_ok()).collect();
    for &g in &p.goals {
        let leaks = (0..n).any(|j| j != g && p.pbar[(j, g)] != 0.0);
        if p.s[g] != 0.0 || leaks {
            return Err(Error::GoalNotAbsorbing(g));
        }
    }
    let states: Vec<usize> = (0..n).filter(|i| !is_goal[*i]).collect();
    if states.is_empty() {
        return Err(Error::InvalidProblem("every state is a goal".into()));
    }
    if let Some(i) = states.iter().find(|i| !(p.s[**i] > 0.0)) {
        return Err(Error::InvalidProblem(format!(
            "stage cost of non-goal state {i} must be > 0"
        )));
    }

    // backward search over the support graph (edge i -> j when pbar[j, i] > 0)
    let mut reaches = is_goal.clone();
    let mut queue: VecDeque<usize> = p.goals.iter().copied().collect();
    while let Some(j) = queue.pop_front() {
        for (i, seen) in reaches.iter_mut().enumerate() {
            if !*seen && p.pbar[(j, i)] > 0.0 {
                *seen = true;
                queue.push_back(i);
            }
        }
    }
    if let Some(i) = (0..n).find(|i| !reaches[*i]) {
        return Err(Error::GoalUnreachable(i));
    }

    let nr = states.len();
    let pbar = DMatrix::from_fn(nr, nr, |a, b| p.pbar[(states[a], states[b])]);
    let pbar_g = DVector::from_iterator(
        nr,
        states
            .iter()
            .map(|&i| p.goals.iter().map(|&g| p.pbar[(g, i)]).sum::<f64>()),
    );
    let s = DVector::from_iterator(nr, states.iter().map(|&i| p.s[i]));
    ReducedLdp::with_states(pbar, pbar_g, s, states)
}

#[derive(Debug, Clone)]
pub struct Desirability {
    /// `z = exp(-lambda)`, entries in (0, 1].
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub trace: ConvergenceTrace,
    /// `||z - G (Pbar^T z + pbar_g)||_sup`.
    pub affine_residual: f64,
    /// Spectral radius of `G Pbar^T`.
    pub spectral_radius: f64,
}

/// `||z - G (Pbar^T z + pbar_g)||_sup`.
pub fn affine_residual(r: &ReducedLdp, z: &DVector<f64>) -> f64 {
    let image = r.discounted_transpose() * z + r.discounted_goal_mass();
    vec_max_abs(&(z - image))
}

/// Solves `z = G (Pbar^T z + pbar_g)`.
///
/// The primary route is a direct solve of `(I - G Pbar^T) z = G pbar_g`;
/// when it fails (vanishing pivot, or a residual above `cfg.tol`) the
/// fixed-point iteration of [`desirability_iteration`] is used instead.
pub fn solve_desirability(r: &ReducedLdp, cfg: &SolveConfig) -> Result<Desirability> {
    cfg.validate()?;
    let start = Instant::now();
    let m = r.discounted_transpose();
    let rho = spectral_radius(&m)?;
    if rho >= 1.0 {
        return Err(Error::SingularSystem { rho });
    }
    let rhs = r.discounted_goal_mass();
    let lhs = DMatrix::identity(r.n(), r.n()) - &m;

    let direct = solve_linear(&lhs, &rhs).filter(|z| affine_residual(r, z) < cfg.tol);
    let (z, trace) = match direct {
        Some(z) => {
            let mut trace = ConvergenceTrace::new();
            trace.push(affine_residual(r, &z), start.elapsed().as_nanos() as u64);
            (z, trace)
        }
        None => {
            log::info!("direct desirability solve rejected; falling back to fixed-point iteration");
            desirability_iteration(r, cfg)?
        }
    };
    finish_desirability(r, z, trace, rho)
}

fn finish_desirability(
    r: &ReducedLdp,
    mut z: DVector<f64>,
    trace: ConvergenceTrace,
    rho: f64,
) -> Result<Desirability> {
    for (i, v) in z.iter_mut().enumerate() {
        if !(*v > 0.0) {
            return Err(Error::CertificationFailed(format!(
                "desirability z[{i}] = {v:e} is not positive (value underflow)"
            )));
        }
        // rounding above 1 only occurs for zero-cost states
        if *v > 1.0 {
            *v = 1.0;
        }
    }
    let lambda = z.map(|v| -v.ln());
    let residual = affine_residual(r, &z);
    Ok(Desirability {
        z,
        lambda,
        trace,
        affine_residual: residual,
        spectral_radius: rho,
    })
}

/// Iterates `z <- G (Pbar^T z + pbar_g)` from `z = 0`; the iterates increase
/// monotonically to the solution.
pub fn desirability_iteration(
    r: &ReducedLdp,
    cfg: &SolveConfig,
) -> Result<(DVector<f64>, ConvergenceTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let m = r.discounted_transpose();
    let rhs = r.discounted_goal_mass();
    let mut z = DVector::zeros(r.n());
    let mut trace = ConvergenceTrace::new();
    for _ in 0..cfg.max_iter {
        let next = &m * &z + &rhs;
        let residual = vec_max_abs(&(&next - &z));
        trace.push(residual, start.elapsed().as_nanos() as u64);
        z = next;
        if residual < cfg.tol && affine_residual(r, &z) < cfg.tol {
            return Ok((z, trace));
        }
    }
    let rho = spectral_radius(&m)?;
    Err(Error::SingularSystem { rho })
}

/// Minimizing transition columns at `lambda`:
/// `p_i = pbar_i * exp(-lambda) / (pbar_i^T exp(-lambda) + pbar_g_i)`.
///
/// Exponentials are shifted by the smallest `lambda` on each column's
/// support, so large values do not underflow to `0 / 0`.
pub fn optimal_policy(r: &ReducedLdp, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = r.n();
    if lambda.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "lambda has length {}, expected {n}",
            lambda.len()
        )));
    }
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem("lambda must be finite".into()));
    }
    let mut pstar = DMatrix::zeros(n, n);
    for i in 0..n {
        let support: Vec<usize> = (0..n).filter(|j| r.pbar[(*j, i)] > 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let shift = support
            .iter()
            .map(|j| lambda[*j])
            .fold(f64::INFINITY, f64::min);
        let mut denom = r.pbar_g[i] * shift.exp();
        for &j in &support {
            let w = r.pbar[(j, i)] * (shift - lambda[j]).exp();
            pstar[(j, i)] = w;
            denom += w;
        }
        for &j in &support {
            pstar[(j, i)] /= denom;
        }
    }
    Ok(pstar)
}

/// Stage cost weights `h(P) = s + diag(P^T log(P / Pbar)) + pi`, with
/// `pi_i = g_i log(g_i / pbar_g_i)` for the implied goal mass
/// `g_i = 1 - 1^T p_i`, and `0 log 0 = 0`.
pub fn kl_stage_cost(r: &ReducedLdp, p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = r.n();
    if p.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "P is {:?}, expected ({n}, {n})",
            p.shape()
        )));
    }
    let mut h = r.s.clone();
    for i in 0..n {
        let mut kl = 0.0;
        let mut retained = 0.0;
        for j in 0..n {
            let pij = p[(j, i)];
            if !(pij >= 0.0) || !pij.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "P[{j}, {i}] = {pij} is not a probability"
                )));
            }
            if pij == 0.0 {
                continue;
            }
            let q = r.pbar[(j, i)];
            if q == 0.0 {
                return Err(Error::SupportViolation {
                    from: i,
                    to: Some(j),
                });
            }
            kl += pij * (pij / q).ln();
            retained += pij;
        }
        let goal = 1.0 - retained;
        if goal < -STOCHASTIC_TOL {
            return Err(Error::InvalidProblem(format!(
                "column {i} of P sums to {retained} > 1"
            )));
        }
        if goal > STOCHASTIC_TOL {
            if r.pbar_g[i] == 0.0 {
                return Err(Error::SupportViolation { from: i, to: None });
            }
            kl += goal * (goal / r.pbar_g[i]).ln();
        }
        h[i] += kl;
    }
    Ok(h)
}

/// `||lambda - (h(P) + P^T lambda)||_sup`.
pub fn verify_bellman(r: &ReducedLdp, lambda: &DVector<f64>, pstar: &DMatrix<f64>) -> Result<f64> {
    if lambda.len() != r.n() {
        return Err(Error::ShapeMismatch(format!(
            "lambda has length {}, expected {}",
            lambda.len(),
            r.n()
        )));
    }
    let h = kl_stage_cost(r, pstar)?;
    let image = h + pstar.tr_mul(lambda);
    Ok(vec_max_abs(&(lambda - image)))
}

/// Bellman map of a [`ReducedLdp`] in value space, one block per column.
/// Used as an iterative cross-check of the direct solve.
#[derive(Debug, Clone, Copy)]
pub struct LdpBellman<'a> {
    reduced: &'a ReducedLdp,
}

impl<'a> LdpBellman<'a> {
    pub fn new(reduced: &'a ReducedLdp) -> Self {
        Self { reduced }
    }
}

impl BlockProblem for LdpBellman<'_> {
    /// `exp(-lambda)`.
    type Shared = DVector<f64>;
    /// Minimizing column `p_i`.
    type Minimizer = DVector<f64>;

    fn cone(&self) -> ConeTag {
        ConeTag::Orthant(self.reduced.n())
    }

    fn n_blocks(&self) -> usize {
        self.reduced.n()
    }

    fn prepare(&self, lambda: &ValueObject) -> Result<DVector<f64>> {
        let lambda = lambda.as_vector().ok_or_else(|| Error::ConeMismatch {
            left: lambda.cone().to_string(),
            right: "orthant".into(),
        })?;
        Ok(lambda.map(|v| (-v).exp()))
    }

    fn affine_part(&self, _: &ValueObject, _: &DVector<f64>) -> Result<ValueObject> {
        Ok(ValueObject::Orthant(self.reduced.s.clone()))
    }

    fn affine_entries(
        &self,
        _: &ValueObject,
        _: &DVector<f64>,
        coords: &[usize],
    ) -> Result<Vec<f64>> {
        Ok(coords.iter().map(|&c| self.reduced.s[c]).collect())
    }

    fn block_support(&self, block: usize) -> Option<Vec<usize>> {
        Some(vec![block])
    }

    fn block_update(
        &self,
        block: usize,
        _: &ValueObject,
        z: &DVector<f64>,
    ) -> Result<(ValueObject, DVector<f64>)> {
        let r = self.reduced;
        let column = r.pbar.column(block);
        let weights = column.component_mul(z);
        let partition = weights.sum() + r.pbar_g[block];
        let mut contribution = DVector::zeros(r.n());
        contribution[block] = -partition.ln();
        Ok((ValueObject::Orthant(contribution), weights / partition))
    }
}

#[derive(Debug, Clone)]
pub struct LdpSolution {
    pub reduced: ReducedLdp,
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub pstar: DMatrix<f64>,
    pub trace: ConvergenceTrace,
    pub affine_residual: f64,
    pub bellman_residual: f64,
    /// Spectral radius of `G Pbar^T`.
    pub spectral_radius: f64,
    /// Spectral radius of the optimal reduced dynamics.
    pub closed_loop_radius: f64,
}

/// Full pipeline: reduce, solve for the desirability, extract the optimal
/// transitions and certify the Bellman residual below `10 * tol`.
pub fn solve_ldp(p: &LdpProblem, cfg: &SolveConfig) -> Result<LdpSolution> {
    let reduced = reduce(p)?;
    solve_reduced(reduced, cfg)
}

pub fn solve_reduced(reduced: ReducedLdp, cfg: &SolveConfig) -> Result<LdpSolution> {
    let des = solve_desirability(&reduced, cfg)?;
    let pstar = optimal_policy(&reduced, &des.lambda)?;
    let bellman_residual = verify_bellman(&reduced, &des.lambda, &pstar)?;
    if bellman_residual >= 10.0 * cfg.tol {
        return Err(Error::CertificationFailed(format!(
            "Bellman residual {bellman_residual:e} exceeds {:e}",
            10.0 * cfg.tol
        )));
    }
    let closed_loop_radius = spectral_radius(&pstar)?;
    Ok(LdpSolution {
        reduced,
        z: des.z,
        lambda: des.lambda,
        pstar,
        trace: des.trace,
        affine_residual: des.affine_residual,
        bellman_residual,
        spectral_radius: des.spectral_radius,
        closed_loop_radius,
    })
}
