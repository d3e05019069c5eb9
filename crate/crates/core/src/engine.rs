//! Block-decomposed fixed-point engine.
//!
//! A [`BlockProblem`] describes a Bellman map of the form
//!
//! ```text
//! T(lambda) = affine(lambda) + sum_i min_{P_i} [ h_i(P_i) + A*_{P_i} lambda ]
//! ```
//!
//! where every block minimum is available in closed form. The engine iterates
//! `lambda <- T(lambda)` until successive iterates agree in sup-norm and the
//! stationarity residual `||lambda - T(lambda)||` is small, and returns the
//! per-block minimizers evaluated at the returned value.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cone::{ConeTag, ValueObject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Every block sees the iterate from the start of the sweep.
    Jacobi,
    /// Block `i` sees the contributions already refreshed for blocks `< i`.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    /// Sup-norm threshold on `lambda_{k+1} - lambda_k`.
    pub tol: f64,
    pub max_iter: usize,
    pub schedule: Schedule,
    /// Any iterate entry above this magnitude is reported as divergence.
    pub divergence_cap: f64,
    /// Number of consecutive strictly growing residuals reported as
    /// divergence, provided the residual also grew by `divergence_growth`
    /// over the window.
    pub divergence_window: usize,
    pub divergence_growth: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            schedule: Schedule::Jacobi,
            divergence_cap: 1e12,
            divergence_window: 50,
            divergence_growth: 2.0,
        }
    }
}

impl SolveConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_divergence_cap(mut self, cap: f64) -> Self {
        self.divergence_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidProblem("max_iter must be >= 1".into()));
        }
        if !(self.divergence_cap > 0.0) {
            return Err(Error::InvalidProblem(
                "divergence_cap must be positive".into(),
            ));
        }
        if self.divergence_window == 0 {
            return Err(Error::InvalidProblem(
                "divergence_window must be >= 1".into(),
            ));
        }
        if !(self.divergence_growth >= 1.0) {
            return Err(Error::InvalidProblem(
                "divergence_growth must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Sup-norm of `lambda_{k+1} - lambda_k`.
    pub residual: f64,
    pub elapsed_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the next record; iteration indices are assigned from 0.
    pub fn push(&mut self, residual: f64, elapsed_ns: u64) {
        let iteration = self.records.len();
        self.records.push(TraceRecord {
            iteration,
            residual,
            elapsed_ns,
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }

    /// CSV with header `iter,residual,elapsed_ns`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,residual,elapsed_ns\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{}\n",
                r.iteration, r.residual, r.elapsed_ns
            ));
        }
        out
    }
}

/// A Bellman map split into independently minimized blocks.
pub trait BlockProblem {
    /// Per-iterate data shared by all blocks (factorizations, reduced costs).
    type Shared;
    /// Minimizing parameter of one block.
    type Minimizer: Clone;

    fn cone(&self) -> ConeTag;

    fn n_blocks(&self) -> usize;

    fn prepare(&self, lambda: &ValueObject) -> Result<Self::Shared>;

    /// Term of the map that does not depend on any block parameter.
    fn affine_part(&self, lambda: &ValueObject, shared: &Self::Shared) -> Result<ValueObject>;

    /// Minimum of block `block` at `lambda`, and the parameter attaining it.
    fn block_update(
        &self,
        block: usize,
        lambda: &ValueObject,
        shared: &Self::Shared,
    ) -> Result<(ValueObject, Self::Minimizer)>;

    /// Orthant coordinates written by block `block` and by no other block.
    ///
    /// Gauss-Seidel sweeps need every block to report one and the sets to
    /// partition the coordinates; otherwise the sweep falls back to Jacobi.
    fn block_support(&self, _block: usize) -> Option<Vec<usize>> {
        None
    }

    /// Entries `coords` of [`affine_part`](Self::affine_part).
    fn affine_entries(
        &self,
        lambda: &ValueObject,
        shared: &Self::Shared,
        coords: &[usize],
    ) -> Result<Vec<f64>> {
        let full = self.affine_part(lambda, shared)?;
        let v = full.as_vector().ok_or_else(|| Error::ConeMismatch {
            left: full.cone().to_string(),
            right: "orthant".into(),
        })?;
        Ok(coords.iter().map(|&c| v[c]).collect())
    }
}

/// Output of [`fixed_point_solve`].
#[derive(Debug, Clone)]
pub struct FixedPoint<M> {
    pub value: ValueObject,
    /// Block minimizers evaluated at `value`.
    pub minimizers: Vec<M>,
    pub trace: ConvergenceTrace,
    pub stationarity_residual: f64,
}

impl<M> FixedPoint<M> {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// One Jacobi application of the map: `(T(lambda), minimizers at lambda)`.
pub fn bellman_sweep<B: BlockProblem>(
    problem: &B,
    lambda: &ValueObject,
) -> Result<(ValueObject, Vec<B::Minimizer>)> {
    let shared = problem.prepare(lambda)?;
    let mut acc = problem.affine_part(lambda, &shared)?;
    let mut minimizers = Vec::with_capacity(problem.n_blocks());
    for i in 0..problem.n_blocks() {
        let (contribution, p) = problem.block_update(i, lambda, &shared)?;
        acc.try_add_assign(&contribution)?;
        minimizers.push(p);
    }
    Ok((acc, minimizers))
}

/// `||lambda - T(lambda)||_sup`; zero exactly at a solution.
pub fn stationarity_residual<B: BlockProblem>(problem: &B, lambda: &ValueObject) -> Result<f64> {
    let (image, _) = bellman_sweep(problem, lambda)?;
    Ok(image.try_sub(lambda)?.sup_norm())
}

/// Per-block supports if they partition the orthant coordinates.
fn gauss_seidel_supports<B: BlockProblem>(problem: &B) -> Option<Vec<Vec<usize>>> {
    let ConeTag::Orthant(n) = problem.cone() else {
        return None;
    };
    let mut owned = vec![false; n];
    let mut supports = Vec::with_capacity(problem.n_blocks());
    for i in 0..problem.n_blocks() {
        let support = problem.block_support(i)?;
        for &c in &support {
            if c >= n || owned[c] {
                return None;
            }
            owned[c] = true;
        }
        supports.push(support);
    }
    owned.iter().all(|o| *o).then_some(supports)
}

/// One in-place sweep: block `i` rewrites its own coordinates from the
/// current iterate, so later blocks already see the update.
fn gauss_seidel_sweep<B: BlockProblem>(
    problem: &B,
    lambda: &ValueObject,
    supports: &[Vec<usize>],
) -> Result<ValueObject> {
    let mut work = lambda.clone();
    for (i, support) in supports.iter().enumerate() {
        let shared = problem.prepare(&work)?;
        let affine = problem.affine_entries(&work, &shared, support)?;
        let (contribution, _) = problem.block_update(i, &work, &shared)?;
        let fresh: Vec<f64> = {
            let c = contribution
                .as_vector()
                .ok_or_else(|| Error::ConeMismatch {
                    left: contribution.cone().to_string(),
                    right: "orthant".into(),
                })?;
            support
                .iter()
                .zip(&affine)
                .map(|(&k, a)| a + c[k])
                .collect()
        };
        let ValueObject::Orthant(v) = &mut work else {
            unreachable!("supports exist only on the orthant")
        };
        for (&k, x) in support.iter().zip(fresh) {
            v[k] = x;
        }
    }
    Ok(work)
}

/// Iterates the block map from `initial` until convergence.
///
/// Convergence requires both `||lambda_{k+1} - lambda_k|| < tol` and a
/// stationarity residual below `10 * tol` at the returned value. Iterates
/// exceeding `divergence_cap`, or residuals that grow strictly for
/// `divergence_window` consecutive sweeps and by a factor of at least
/// `divergence_growth` over them, are reported as `Diverged`.
pub fn fixed_point_solve<B: BlockProblem>(
    problem: &B,
    initial: &ValueObject,
    cfg: &SolveConfig,
) -> Result<FixedPoint<B::Minimizer>> {
    fixed_point_solve_observed(problem, initial, cfg, |_, _| {})
}

/// [`fixed_point_solve`] with a callback receiving every iterate
/// `(k, lambda_k)`, starting with `(0, initial)`.
pub fn fixed_point_solve_observed<B, F>(
    problem: &B,
    initial: &ValueObject,
    cfg: &SolveConfig,
    mut observe: F,
) -> Result<FixedPoint<B::Minimizer>>
where
    B: BlockProblem,
    F: FnMut(usize, &ValueObject),
{
    cfg.validate()?;
    if initial.cone() != problem.cone() {
        return Err(Error::ConeMismatch {
            left: initial.cone().to_string(),
            right: problem.cone().to_string(),
        });
    }
    if !initial.in_cone() {
        return Err(Error::NotInCone {
            violation: initial.membership_violation(),
        });
    }

    let start = Instant::now();
    let mut trace = ConvergenceTrace::new();
    let mut lambda = initial.clone();
    let supports = match cfg.schedule {
        Schedule::GaussSeidel => {
            let supports = gauss_seidel_supports(problem);
            if supports.is_none() {
                log::debug!("blocks are coupled; Gauss-Seidel falls back to Jacobi sweeps");
            }
            supports
        }
        Schedule::Jacobi => None,
    };
    let mut previous_residual = f64::INFINITY;
    let mut growth_run = 0usize;
    let mut last_residual = f64::NAN;
    observe(0, &lambda);

    for k in 0..cfg.max_iter {
        let next = match &supports {
            Some(supports) => gauss_seidel_sweep(problem, &lambda, supports)?,
            None => bellman_sweep(problem, &lambda)?.0,
        };
        if !next.is_finite() || next.sup_norm() > cfg.divergence_cap {
            return Err(Error::Diverged {
                iteration: k,
                reason: format!(
                    "iterate magnitude {:e} exceeds cap {:e}",
                    next.sup_norm(),
                    cfg.divergence_cap
                ),
            });
        }
        let residual = next.try_sub(&lambda)?.sup_norm();
        trace.push(residual, start.elapsed().as_nanos() as u64);
        last_residual = residual;

        if residual > previous_residual {
            growth_run += 1;
            if growth_run >= cfg.divergence_window {
                // slow monotone transients also grow for a while; require real growth
                let records = trace.records();
                let before = records[records.len() - 1 - cfg.divergence_window].residual;
                if residual >= cfg.divergence_growth * before {
                    return Err(Error::Diverged {
                        iteration: k,
                        reason: format!(
                            "residual grew for {growth_run} consecutive sweeps, from {before:e} to {residual:e}"
                        ),
                    });
                }
            }
        } else {
            growth_run = 0;
        }
        previous_residual = residual;
        lambda = next;
        observe(k + 1, &lambda);

        if residual < cfg.tol {
            let (image, minimizers) = bellman_sweep(problem, &lambda)?;
            let stationarity = image.try_sub(&lambda)?.sup_norm();
            if stationarity < 10.0 * cfg.tol {
                log::debug!(
                    "converged after {} sweeps (residual {:e}, stationarity {:e})",
                    k + 1,
                    residual,
                    stationarity
                );
                return Ok(FixedPoint {
                    value: lambda,
                    minimizers,
                    trace,
                    stationarity_residual: stationarity,
                });
            }
        }
    }

    Err(Error::MaxIterExceeded {
        iterations: cfg.max_iter,
        residual: last_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    /// Scalar block map `lambda <- c + a * lambda`, one block carrying `a * lambda`.
    struct Scalar {
        c: f64,
        a: f64,
    }

    impl BlockProblem for Scalar {
        type Shared = ();
        type Minimizer = ();

        fn cone(&self) -> ConeTag {
            ConeTag::Orthant(1)
        }

        fn n_blocks(&self) -> usize {
            1
        }

        fn prepare(&self, _: &ValueObject) -> Result<()> {
            Ok(())
        }

        fn affine_part(&self, _: &ValueObject, _: &()) -> Result<ValueObject> {
            ValueObject::from_slice(&[self.c])
        }

        fn block_update(
            &self,
            _: usize,
            lambda: &ValueObject,
            _: &(),
        ) -> Result<(ValueObject, ())> {
            let x = lambda.as_vector().unwrap()[0];
            Ok((ValueObject::from_slice(&[self.a * x])?, ()))
        }

        fn block_support(&self, _: usize) -> Option<Vec<usize>> {
            Some(vec![0])
        }
    }

    fn scalar(x: f64) -> ValueObject {
        ValueObject::Orthant(DVector::from_element(1, x))
    }

    #[test]
    fn contraction_converges_to_geometric_sum() {
        let p = Scalar { c: 1.0, a: 0.5 };
        let cfg = SolveConfig::default();
        let fp = fixed_point_solve(&p, &scalar(0.0), &cfg).unwrap();
        assert!((fp.value.as_vector().unwrap()[0] - 2.0).abs() < cfg.tol);
        assert!(fp.stationarity_residual < 10.0 * cfg.tol);
        let idx: Vec<_> = fp.trace.records().iter().map(|r| r.iteration).collect();
        assert_eq!(idx, (0..fp.trace.len()).collect::<Vec<_>>());
    }

    #[test]
    fn expansive_map_diverges() {
        let p = Scalar { c: 1.0, a: 1.5 };
        let cfg = SolveConfig::default().with_divergence_cap(1e6);
        assert!(matches!(
            fixed_point_solve(&p, &scalar(0.0), &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn growth_window_catches_slow_blowup() {
        let p = Scalar { c: 1.0, a: 1.05 };
        match fixed_point_solve(&p, &scalar(0.0), &SolveConfig::default()) {
            Err(Error::Diverged { iteration, .. }) => assert_eq!(iteration, 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mild_growth_is_left_to_the_cap() {
        // 1.01^50 < 2, so the window alone does not fire
        let p = Scalar { c: 1.0, a: 1.01 };
        match fixed_point_solve(&p, &scalar(0.0), &SolveConfig::default()) {
            Err(Error::Diverged { iteration, reason }) => {
                assert!(iteration > 50);
                assert!(reason.contains("cap"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stalled_iteration_hits_max_iter() {
        // lambda <- 1 + lambda grows linearly; residual is constant
        let p = Scalar { c: 1.0, a: 1.0 };
        let cfg = SolveConfig::default().with_max_iter(100);
        assert!(matches!(
            fixed_point_solve(&p, &scalar(0.0), &cfg),
            Err(Error::MaxIterExceeded {
                iterations: 100,
                ..
            })
        ));
    }

    #[test]
    fn stationarity_examples() {
        let p = Scalar { c: 1.0, a: 0.5 };
        assert_eq!(stationarity_residual(&p, &scalar(0.0)).unwrap(), 1.0);
        assert_eq!(stationarity_residual(&p, &scalar(2.0)).unwrap(), 0.0);
        let cfg = SolveConfig::default().with_tol(1e-12);
        let fp = fixed_point_solve(&p, &scalar(0.0), &cfg).unwrap();
        assert!(stationarity_residual(&p, &fp.value).unwrap() < 1e-10);
    }

    #[test]
    fn gauss_seidel_reaches_same_point() {
        let p = Scalar { c: 1.0, a: 0.5 };
        let cfg = SolveConfig::default().with_schedule(Schedule::GaussSeidel);
        let fp = fixed_point_solve(&p, &scalar(0.0), &cfg).unwrap();
        assert!((fp.value.as_vector().unwrap()[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_config_and_start() {
        let p = Scalar { c: 1.0, a: 0.5 };
        let bad = SolveConfig::default().with_tol(0.0);
        assert!(fixed_point_solve(&p, &scalar(0.0), &bad).is_err());
        assert!(matches!(
            fixed_point_solve(&p, &scalar(-1.0), &SolveConfig::default()),
            Err(Error::NotInCone { .. })
        ));
        assert!(matches!(
            fixed_point_solve(
                &p,
                &ValueObject::zero(ConeTag::Orthant(2)),
                &SolveConfig::default()
            ),
            Err(Error::ConeMismatch { .. })
        ));
    }

    #[test]
    fn trace_csv_header() {
        let mut t = ConvergenceTrace::new();
        t.push(0.5, 10);
        let csv = t.to_csv();
        assert!(csv.starts_with("iter,residual,elapsed_ns\n0,"));
    }
}
