//! Solver-versus-oracle comparisons for the `verify` command.

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, Normal};

use conebellman::engine::SolveConfig;
use conebellman::error::Result;
use conebellman::ldp::{solve_ldp, LdpProblem};
use conebellman::lqr::{solve_lqr, LqrProblem};
use conebellman::oracle::{
    dijkstra, ldp_logsumexp_vi, ldp_rollout, naive_dare, ssp_value_iteration,
};
use conebellman::problem_file::Problem;
use conebellman::ssp::{solve_graph, solve_ssp, SspGraph, SspProblem};

pub const SSP_GAP: f64 = 1e-8;
pub const LQR_GAP: f64 = 1e-9;
pub const LDP_GAP: f64 = 1e-8;
pub const BELLMAN_GAP: f64 = 1e-9;
/// Two-sided level of a single rollout check (three standard errors).
pub const ROLLOUT_ALPHA: f64 = 0.0027;
pub const ROLLOUT_HORIZON: usize = 1000;
/// Rollouts are run from at most this many start states.
pub const ROLLOUT_STATES: usize = 5;
const ORACLE_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
}

fn gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

pub fn verify(problem: &Problem, cfg: &SolveConfig, opts: &VerifyOptions) -> Result<Vec<Check>> {
    match problem {
        Problem::Ssp(p) => verify_ssp(p, cfg),
        Problem::SspGraph(g) => verify_graph(g, cfg),
        Problem::Lqr(p) => verify_lqr(p, cfg),
        Problem::Ldp(p) => verify_ldp(p, cfg, opts),
    }
}

fn verify_ssp(p: &SspProblem, cfg: &SolveConfig) -> Result<Vec<Check>> {
    let sol = solve_ssp(p, cfg)?;
    let oracle = ssp_value_iteration(p, ORACLE_ITERS);
    Ok(vec![
        Check::below(
            "gap to dense value iteration",
            gap(&sol.lambda, &oracle),
            SSP_GAP,
        ),
        Check::below(
            "stationarity residual",
            sol.stationarity_residual,
            10.0 * cfg.tol,
        ),
    ])
}

fn verify_graph(g: &SspGraph, cfg: &SolveConfig) -> Result<Vec<Check>> {
    let sol = solve_graph(g, cfg)?;
    let lambda = &sol.solution.lambda;
    let mut checks = verify_ssp(&sol.compiled.problem, cfg)?;
    if g.edges.iter().all(|e| e.prob.is_none()) {
        let dist = dijkstra(g)?;
        let worst = sol
            .compiled
            .states
            .iter()
            .enumerate()
            .map(|(i, node)| (lambda[i] - dist[*node]).abs())
            .fold(0.0, f64::max);
        checks.push(Check::below("gap to shortest paths", worst, SSP_GAP));
    }
    Ok(checks)
}

fn verify_lqr(p: &LqrProblem, cfg: &SolveConfig) -> Result<Vec<Check>> {
    let sol = solve_lqr(p, cfg)?;
    let oracle = naive_dare(p, 1e-14, ORACLE_ITERS)?;
    Ok(vec![
        Check::below(
            "gap to explicit-inverse Riccati iteration",
            (&sol.value - oracle).amax(),
            LQR_GAP,
        ),
        Check::below("Riccati residual", sol.riccati_residual, LQR_GAP),
        Check::below(
            "closed loop spectral radius",
            sol.closed_loop_radius,
            1.0 - f64::EPSILON,
        ),
    ])
}

/// Critical value so that `k` independent two-sided checks jointly hold at
/// level `ROLLOUT_ALPHA` (Sidak correction).
pub fn rollout_critical_value(k: usize) -> f64 {
    let per_check = 1.0 - (1.0 - ROLLOUT_ALPHA).powf(1.0 / k as f64);
    let normal = Normal::standard();
    normal.inverse_cdf(1.0 - per_check / 2.0)
}

fn verify_ldp(p: &LdpProblem, cfg: &SolveConfig, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let sol = solve_ldp(p, cfg)?;
    let r = &sol.reduced;
    let oracle = ldp_logsumexp_vi(r, ORACLE_ITERS);
    let mut checks = vec![
        Check::below(
            "gap to log-sum-exp value iteration",
            gap(&sol.lambda, &oracle),
            LDP_GAP,
        ),
        Check::below("Bellman residual", sol.bellman_residual, BELLMAN_GAP),
    ];
    let starts = r.n().min(ROLLOUT_STATES);
    let z = rollout_critical_value(starts);
    for start in 0..starts {
        let seed = opts.seed.wrapping_add((start as u64) << 32);
        let stats = ldp_rollout(r, &sol.pstar, start, ROLLOUT_HORIZON, opts.trials, seed)?;
        let state = r.states()[start];
        let dev = (stats.mean_cost - sol.lambda[start]).abs();
        let limit = if stats.std_error > 0.0 {
            z * stats.std_error
        } else {
            BELLMAN_GAP
        };
        checks.push(Check::below(
            format!("rollout deviation from state {state}"),
            dev,
            limit,
        ));
        checks.push(Check::below(
            format!("rollout truncation from state {state}"),
            stats.truncated_fraction,
            0.01,
        ));
    }
    Ok(checks)
}
