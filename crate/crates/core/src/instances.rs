//! Seeded random problem generators for tests and benchmarks.
//!
//! All generators draw from `ChaCha8Rng::seed_from_u64(seed)`, so the same
//! arguments always give the same instance.
//!
//! - Graphs: nodes are ranked by a random permutation with the goal first;
//!   every non-goal node gets one edge towards a lower-ranked node, which
//!   guarantees reachability, plus a few random edges that may form cycles.
//! - LQR: `A = V diag(eigs) V^{-1}` with real eigenvalues in `[-1.2, 1.2]`
//!   (some unstable), dense Gaussian `B`, `Q = C C^T + 0.1 I` and
//!   `R = D D^T + 0.5 I`.
//! - LDP: the same ranked backbone on a sparse column-stochastic `Pbar`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ldp::{LdpProblem, ReducedLdp};
use crate::lqr::LqrProblem;
use crate::ssp::{SspEdge, SspGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random ranking with node `goal` first.
fn ranking(n: usize, goal: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut rest: Vec<usize> = (0..n).filter(|v| *v != goal).collect();
    rest.shuffle(rng);
    let mut order = vec![goal];
    order.extend(rest);
    order
}

fn check_size(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidProblem(format!(
            "instance size must be at least {min}, got {n}"
        )));
    }
    Ok(())
}

/// Deterministic graph with `nodes` nodes, goal `nodes - 1`, edge costs in
/// `[1, 10)` and per-node costs `s` in `[0.5, 1)`.
pub fn deterministic_graph(nodes: usize, seed: u64) -> Result<SspGraph> {
    check_size(nodes, 2)?;
    let mut rng = rng(seed);
    let goal = nodes - 1;
    let order = ranking(nodes, goal, &mut rng);
    let mut edges = Vec::new();
    for rank in 1..nodes {
        let from = order[rank];
        let down = order[rng.random_range(0..rank)];
        edges.push(SspEdge::deterministic(
            from,
            down,
            rng.random_range(1.0..10.0),
        ));
        let extra = rng.random_range(0..3);
        for _ in 0..extra {
            let to = rng.random_range(0..nodes);
            if to != from {
                edges.push(SspEdge::deterministic(
                    from,
                    to,
                    rng.random_range(1.0..10.0),
                ));
            }
        }
    }
    let mut s: Vec<f64> = (0..nodes).map(|_| rng.random_range(0.5..1.0)).collect();
    s[goal] = 0.0;
    Ok(SspGraph {
        nodes,
        goal: vec![goal],
        edges,
        s,
    })
}

/// Stochastic graph: every edge moves to a lower-ranked node with
/// probability at least one half and spreads the rest over up to two random
/// nodes.
pub fn stochastic_graph(nodes: usize, seed: u64) -> Result<SspGraph> {
    check_size(nodes, 2)?;
    let mut rng = rng(seed);
    let goal = nodes - 1;
    let order = ranking(nodes, goal, &mut rng);
    let mut edges = Vec::new();
    for rank in 1..nodes {
        let from = order[rank];
        let count = rng.random_range(1..4);
        for _ in 0..count {
            let down = order[rng.random_range(0..rank)];
            let mut prob = vec![0.0; nodes];
            let main: f64 = rng.random_range(0.5..1.0);
            prob[down] += main;
            let others = rng.random_range(1..3);
            let mut left = 1.0 - main;
            for k in 0..others {
                let share = if k + 1 == others {
                    left
                } else {
                    left * rng.random::<f64>()
                };
                prob[rng.random_range(0..nodes)] += share;
                left -= share;
            }
            let total: f64 = prob.iter().sum();
            prob.iter_mut().for_each(|p| *p /= total);
            edges.push(SspEdge {
                from,
                to: Some(down),
                cost: rng.random_range(1.0..10.0),
                prob: Some(prob),
            });
        }
    }
    let mut s: Vec<f64> = (0..nodes).map(|_| rng.random_range(0.5..1.0)).collect();
    s[goal] = 0.0;
    Ok(SspGraph {
        nodes,
        goal: vec![goal],
        edges,
        s,
    })
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random stabilizable pair by spectrum placement; see the module docs.
pub fn stabilizable_lqr(n: usize, m: usize, seed: u64) -> Result<LqrProblem> {
    check_size(n, 1)?;
    check_size(m, 1)?;
    let mut rng = rng(seed);
    let eigs = DVector::from_fn(n, |_, _| rng.random_range(-1.2..1.2));
    let basis = DMatrix::identity(n, n) + gaussian(n, n, &mut rng) * (0.3 / (n as f64).sqrt());
    let inverse = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidProblem("eigenvector basis is singular".into()))?;
    let a = &basis * DMatrix::from_diagonal(&eigs) * inverse;
    let b = gaussian(n, m, &mut rng);
    let c = gaussian(n, n, &mut rng) * (1.0 / (n as f64).sqrt());
    let d = gaussian(m, m, &mut rng) * (1.0 / (m as f64).sqrt());
    let q = &c * c.transpose() + DMatrix::identity(n, n) * 0.1;
    let r = &d * d.transpose() + DMatrix::identity(m, m) * 0.5;
    LqrProblem::new(a, b, q, r)
}

/// Sparse LDP with `states` non-goal states and `goals` goal states placed
/// last. Each non-goal column has a lower-ranked successor plus up to three
/// random ones; `s` is drawn from `[0.5, 2)`.
pub fn random_ldp(states: usize, goals: usize, seed: u64) -> Result<LdpProblem> {
    check_size(states, 1)?;
    check_size(goals, 1)?;
    let mut rng = rng(seed);
    let n = states + goals;
    let mut rest: Vec<usize> = (0..states).collect();
    rest.shuffle(&mut rng);

    let mut pbar = DMatrix::zeros(n, n);
    for (rank, &i) in rest.iter().enumerate() {
        // lower-ranked successors are the goals and the states ranked before i
        let pick = rng.random_range(0..goals + rank);
        let down = if pick < goals {
            states + pick
        } else {
            rest[pick - goals]
        };
        let mut weights = vec![(down, rng.random_range(0.2..1.0))];
        for _ in 0..rng.random_range(0..4) {
            weights.push((rng.random_range(0..n), rng.random_range(0.0..1.0)));
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        for (j, w) in weights {
            pbar[(j, i)] += w / total;
        }
    }
    for g in states..n {
        pbar[(g, g)] = 1.0;
    }
    let s = DVector::from_fn(n, |i, _| {
        if i < states {
            rng.random_range(0.5..2.0)
        } else {
            0.0
        }
    });
    LdpProblem::new(pbar, s, (states..n).collect())
}

/// Random transitions with support inside that of the passive dynamics
/// (goal mass included).
pub fn random_feasible_policy(r: &ReducedLdp, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = r.n();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if r.pbar()[(j, i)] > 0.0 {
                let w: f64 = rng.random_range(0.01..1.0);
                p[(j, i)] = w;
                total += w;
            }
        }
        if r.pbar_g()[i] > 0.0 {
            total += rng.random_range(0.01..1.0);
        }
        for j in 0..n {
            p[(j, i)] /= total;
        }
    }
    p
}
