//! Brute-force reference implementations.
//!
//! Each routine here recomputes its answer through a different numerical
//! path than the solver it checks: dense sweeps instead of the block engine,
//! explicit inverses instead of Cholesky factors, log-space iteration instead
//! of a linear solve, and sampled trajectories instead of algebra.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ldp::ReducedLdp;
use crate::lqr::LqrProblem;
use crate::ssp::{SspGraph, SspProblem};

/// Relative step below which the dense sweeps stop early.
const VI_STOP: f64 = 1e-15;

/// Plain synchronous value iteration for an [`SspProblem`] from `lambda = 0`.
///
/// Each sweep recomputes `B^T lambda` in full and, per block, takes the
/// smallest of the `m_i + 1` vertex values (the zero input and the full
/// budget on each input). Stops after `iters` sweeps or once the step is
/// negligible.
pub fn ssp_value_iteration(p: &SspProblem, iters: usize) -> DVector<f64> {
    let n = p.n();
    let (a, b, e) = (p.a(), p.b(), p.e());
    let mut lambda = DVector::zeros(n);
    for _ in 0..iters {
        let mut next = DVector::zeros(n);
        for j in 0..n {
            let mut acc = p.s()[j];
            for k in 0..n {
                acc += a[(k, j)] * lambda[k];
            }
            next[j] = acc;
        }
        for i in 0..n {
            let mut best = 0.0_f64;
            for k in p.block_range(i) {
                let mut c = p.r()[k];
                for j in 0..n {
                    c += b[(j, k)] * lambda[j];
                }
                best = best.min(c);
            }
            for j in 0..n {
                next[j] += e[(i, j)] * best;
            }
        }
        let step = (&next - &lambda).amax();
        let scale = next.amax().max(1.0);
        lambda = next;
        if step <= VI_STOP * scale {
            break;
        }
    }
    lambda
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest distances to the goal set on a deterministic graph. Taking edge
/// `from -> to` costs `cost + s[from]`.
pub fn dijkstra(graph: &SspGraph) -> Result<Vec<f64>> {
    graph.validate()?;
    let n = graph.nodes;
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for edge in &graph.edges {
        if graph.is_goal(edge.from) {
            continue;
        }
        let to = match (&edge.prob, edge.to) {
            (None, Some(t)) => t,
            _ => {
                return Err(Error::InvalidProblem(
                    "shortest-path oracle needs deterministic edges".into(),
                ))
            }
        };
        incoming[to].push((edge.from, edge.cost + graph.s[edge.from]));
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &g in &graph.goal {
        dist[g] = 0.0;
        heap.push(Frontier { dist: 0.0, node: g });
    }
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(from, w) in &incoming[node] {
            let candidate = d + w;
            if candidate < dist[from] {
                dist[from] = candidate;
                heap.push(Frontier {
                    dist: candidate,
                    node: from,
                });
            }
        }
    }
    match dist.iter().position(|d| d.is_infinite()) {
        Some(node) => Err(Error::UnreachableNode(node)),
        None => Ok(dist),
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn gauss_jordan_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut work = m.clone();
    let mut inv = DMatrix::identity(n, n);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot_row =
            (col..n).max_by(|x, y| work[(*x, col)].abs().total_cmp(&work[(*y, col)].abs()))?;
        let pivot = work[(pivot_row, col)];
        if pivot.abs() <= 1e-14 * scale {
            return None;
        }
        work.swap_rows(col, pivot_row);
        inv.swap_rows(col, pivot_row);
        for j in 0..n {
            work[(col, j)] /= pivot;
            inv[(col, j)] /= pivot;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = work[(row, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                work[(row, j)] -= factor * work[(col, j)];
                inv[(row, j)] -= factor * inv[(col, j)];
            }
        }
    }
    Some(inv)
}

/// Iterates the Riccati recursion with an explicit inverse of
/// `R + B^T P B`, starting from `P = Q`, until the sup-norm step is below
/// `tol * max(1, ||P||)`.
pub fn naive_dare(p: &LqrProblem, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    let (a, b, q, r) = (p.a(), p.b(), p.q(), p.r());
    let mut value = q.clone();
    for iteration in 0..max_iter {
        let inner = r + b.transpose() * &value * b;
        let inverse = gauss_jordan_inverse(&inner).ok_or(Error::SingularInnerMatrix)?;
        let cross = a.transpose() * &value * b;
        let next = q + a.transpose() * &value * a - &cross * inverse * cross.transpose();
        let next = (&next + next.transpose()) * 0.5;
        let magnitude = next.amax();
        if !magnitude.is_finite() || magnitude > 1e12 {
            return Err(Error::Diverged {
                iteration,
                reason: format!("Riccati iterate reached magnitude {magnitude:e}"),
            });
        }
        let step = (&next - &value).amax();
        value = next;
        if step < tol * magnitude.max(1.0) {
            return Ok(value);
        }
    }
    Err(Error::Diverged {
        iteration: max_iter,
        reason: "Riccati recursion did not settle".into(),
    })
}

/// Iterates `lambda <- s - log(Pbar^T exp(-lambda) + pbar_g)` from
/// `lambda = 0`, evaluating each log-sum-exp with a max shift.
pub fn ldp_logsumexp_vi(r: &ReducedLdp, iters: usize) -> DVector<f64> {
    let n = r.n();
    let (pbar, pbar_g, s) = (r.pbar(), r.pbar_g(), r.s());
    let mut lambda = DVector::zeros(n);
    for _ in 0..iters {
        let mut next = DVector::zeros(n);
        for i in 0..n {
            // terms are log(pbar_ji) - lambda_j plus log(pbar_g_i) - 0
            let mut exponents = Vec::with_capacity(n + 1);
            for j in 0..n {
                if pbar[(j, i)] > 0.0 {
                    exponents.push(pbar[(j, i)].ln() - lambda[j]);
                }
            }
            if pbar_g[i] > 0.0 {
                exponents.push(pbar_g[i].ln());
            }
            let top = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = exponents.iter().map(|x| (x - top).exp()).sum();
            next[i] = s[i] - (top + sum.ln());
        }
        let step = (&next - &lambda).amax();
        let scale = next.amax().max(1.0);
        lambda = next;
        if step <= VI_STOP * scale {
            break;
        }
    }
    lambda
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutStats {
    pub trials: usize,
    pub mean_cost: f64,
    pub std_error: f64,
    pub horizon: usize,
    /// Share of trajectories still running at the horizon.
    pub truncated_fraction: f64,
}

/// Monte Carlo estimate of the expected total cost from `start` under the
/// transition matrix `pstar`.
///
/// Every step from state `i` pays `s_i` plus the KL divergence of the
/// column (goal mass included) from the passive dynamics, then samples the
/// next state, with the leftover mass `1 - 1^T p_i` leading to the goal.
/// Trial `t` draws from a ChaCha8 stream seeded with `seed + t`.
pub fn ldp_rollout(
    r: &ReducedLdp,
    pstar: &DMatrix<f64>,
    start: usize,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<RolloutStats> {
    if trials == 0 || horizon == 0 {
        return Err(Error::BadSeedConfig(format!(
            "trials ({trials}) and horizon ({horizon}) must be positive"
        )));
    }
    let n = r.n();
    if start >= n {
        return Err(Error::BadSeedConfig(format!(
            "start state {start} out of range"
        )));
    }
    if pstar.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "transition matrix is {:?}, expected ({n}, {n})",
            pstar.shape()
        )));
    }

    let mut step_cost = vec![0.0; n];
    for i in 0..n {
        let mut kl = 0.0;
        let mut goal_mass = 1.0;
        for j in 0..n {
            let p = pstar[(j, i)];
            goal_mass -= p;
            if p > 0.0 {
                let q = r.pbar()[(j, i)];
                if q <= 0.0 {
                    return Err(Error::SupportViolation {
                        from: i,
                        to: Some(j),
                    });
                }
                kl += p * (p / q).ln();
            }
        }
        if goal_mass > 1e-12 {
            let q = r.pbar_g()[i];
            if q <= 0.0 {
                return Err(Error::SupportViolation { from: i, to: None });
            }
            kl += goal_mass * (goal_mass / q).ln();
        }
        step_cost[i] = r.s()[i] + kl;
    }

    // running mean and squared deviations (Welford)
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut truncated = 0usize;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let mut state = start;
        let mut cost = 0.0;
        let mut absorbed = false;
        for _ in 0..horizon {
            cost += step_cost[state];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = None;
            for j in 0..n {
                acc += pstar[(j, state)];
                if u < acc {
                    next = Some(j);
                    break;
                }
            }
            match next {
                Some(j) => state = j,
                None => {
                    absorbed = true;
                    break;
                }
            }
        }
        if !absorbed {
            truncated += 1;
        }
        let delta = cost - mean;
        mean += delta / (trial + 1) as f64;
        m2 += delta * (cost - mean);
    }

    let count = trials as f64;
    let std_error = if trials > 1 {
        (m2 / (count - 1.0) / count).sqrt()
    } else {
        0.0
    };
    Ok(RolloutStats {
        trials,
        mean_cost: mean,
        std_error,
        horizon,
        truncated_fraction: truncated as f64 / count,
    })
}
