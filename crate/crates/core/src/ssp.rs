//! Stochastic shortest path as a positive linear system.
//!
//! State `x` is the mass sitting in each non-goal state. Inputs are split in
//! one block per state; block `i` may spend at most `E[i, :] x` in total, and
//! the value function is linear, `J(x) = lambda^T x`. The Bellman equation
//!
//! ```text
//! lambda = s + A^T lambda + sum_i min_{K_i} K_i^T (r_i + B_i^T lambda)
//! ```
//!
//! decomposes per block; each block minimum is a linear program over a
//! product of scaled simplices and is attained at a vertex: column `j` of
//! `K_i` spends the whole budget `E[i, j]` on the cheapest input of the block
//! when that input has negative reduced cost, and nothing otherwise.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::{ConeTag, ValueObject, MEMBERSHIP_TOL};
use crate::engine::{
    bellman_sweep, fixed_point_solve_observed, BlockProblem, ConvergenceTrace, SolveConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{solve_linear, spectral_radius};

/// Slack accepted on the sign constraints of a gain.
const GAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SspProblem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    s: DVector<f64>,
    r: DVector<f64>,
    block_sizes: Vec<usize>,
    e: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl SspProblem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        s: DVector<f64>,
        r: DVector<f64>,
        block_sizes: Vec<usize>,
        e: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::InvalidProblem("SSP needs at least one state".into()));
        }
        if a.ncols() != n {
            return Err(Error::NonSquare {
                rows: n,
                cols: a.ncols(),
            });
        }
        let m = b.ncols();
        if b.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if s.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "s has length {}, expected {n}",
                s.len()
            )));
        }
        if r.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "r has length {}, expected {m}",
                r.len()
            )));
        }
        if block_sizes.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "blocks has length {}, expected one block per state ({n})",
                block_sizes.len()
            )));
        }
        if block_sizes.iter().sum::<usize>() != m {
            return Err(Error::ShapeMismatch(format!(
                "block sizes sum to {}, but B has {m} columns",
                block_sizes.iter().sum::<usize>()
            )));
        }
        if e.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "E is {:?}, expected ({n}, {n})",
                e.shape()
            )));
        }
        let all_finite = a
            .iter()
            .chain(b.iter())
            .chain(s.iter())
            .chain(r.iter())
            .chain(e.iter());
        if !all_finite.into_iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite entry in SSP data".into()));
        }
        if let Some(i) = s.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::InvalidProblem(format!(
                "state cost s[{i}] must be > 0"
            )));
        }
        if let Some(i) = r.iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidProblem(format!(
                "input cost r[{i}] must be >= 0"
            )));
        }
        if a.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidProblem(
                "A must be elementwise nonnegative".into(),
            ));
        }
        if e.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidProblem(
                "E must be elementwise nonnegative".into(),
            ));
        }
        let offsets = block_sizes
            .iter()
            .scan(0, |acc, &size| {
                let start = *acc;
                *acc += size;
                Some(start)
            })
            .collect();
        Ok(Self {
            a,
            b,
            s,
            r,
            block_sizes,
            e,
            offsets,
        })
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

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Global input indices belonging to block `i`.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.block_sizes[i]
    }

    /// Block-summing matrix `C` (n x m): row `i` is ones over block `i`.
    pub fn block_sum_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n(), self.m());
        for i in 0..self.n() {
            for k in self.block_range(i) {
                c[(i, k)] = 1.0;
            }
        }
        c
    }

    /// True when no input can move any mass.
    pub fn has_no_control_authority(&self) -> bool {
        (0..self.n()).all(|i| {
            let budget = self.e.row(i).iter().any(|v| *v > 0.0);
            let acts = self
                .block_range(i)
                .any(|k| self.b.column(k).iter().any(|v| *v != 0.0));
            !(budget && acts)
        })
    }

    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * gain
    }
}

/// `true` iff `K >= 0` and `E - C K >= 0` elementwise.
pub fn validate_gain(p: &SspProblem, gain: &DMatrix<f64>) -> Result<bool> {
    if gain.shape() != (p.m(), p.n()) {
        return Err(Error::ShapeMismatch(format!(
            "gain is {:?}, expected ({}, {})",
            gain.shape(),
            p.m(),
            p.n()
        )));
    }
    if gain.iter().any(|v| *v < -GAIN_TOL) {
        return Ok(false);
    }
    for i in 0..p.n() {
        for j in 0..p.n() {
            let spent: f64 = p.block_range(i).map(|k| gain[(k, j)]).sum();
            if p.e[(i, j)] - spent < -GAIN_TOL * p.e[(i, j)].abs().max(1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Bellman map of an [`SspProblem`] with one block per input partition.
#[derive(Debug, Clone, Copy)]
pub struct SspBellman<'a> {
    problem: &'a SspProblem,
}

impl<'a> SspBellman<'a> {
    pub fn new(problem: &'a SspProblem) -> Self {
        Self { problem }
    }
}

/// Vertex chosen by one block: the input that receives the whole budget, or
/// `None` for the zero column.
pub type BlockAction = Option<usize>;

impl BlockProblem for SspBellman<'_> {
    type Shared = ();
    type Minimizer = BlockAction;

    fn cone(&self) -> ConeTag {
        ConeTag::Orthant(self.problem.n())
    }

    fn n_blocks(&self) -> usize {
        self.problem.n()
    }

    fn prepare(&self, _: &ValueObject) -> Result<()> {
        Ok(())
    }

    fn affine_part(&self, lambda: &ValueObject, _: &()) -> Result<ValueObject> {
        let lambda = orthant(lambda)?;
        Ok(ValueObject::Orthant(
            &self.problem.s + self.problem.a.tr_mul(lambda),
        ))
    }

    fn affine_entries(&self, lambda: &ValueObject, _: &(), coords: &[usize]) -> Result<Vec<f64>> {
        let lambda = orthant(lambda)?;
        let p = self.problem;
        Ok(coords
            .iter()
            .map(|&c| p.s[c] + p.a.column(c).dot(lambda))
            .collect())
    }

    fn block_support(&self, block: usize) -> Option<Vec<usize>> {
        let row = self.problem.e.row(block);
        Some((0..row.len()).filter(|&j| row[j] != 0.0).collect())
    }

    fn block_update(
        &self,
        block: usize,
        lambda: &ValueObject,
        _: &(),
    ) -> Result<(ValueObject, BlockAction)> {
        let p = self.problem;
        let lambda = orthant(lambda)?;
        let mut contribution = DVector::zeros(p.n());
        let mut best: Option<(usize, f64)> = None;
        for k in p.block_range(block) {
            let reduced = p.r[k] + p.b.column(k).dot(lambda);
            // strict comparison keeps the lowest index among ties
            if best.is_none_or(|(_, c)| reduced < c) {
                best = Some((k, reduced));
            }
        }
        match best {
            Some((k, c)) if c < 0.0 => {
                for j in 0..p.n() {
                    contribution[j] = p.e[(block, j)] * c;
                }
                Ok((ValueObject::Orthant(contribution), Some(k)))
            }
            _ => Ok((ValueObject::Orthant(contribution), None)),
        }
    }
}

fn orthant(v: &ValueObject) -> Result<&DVector<f64>> {
    v.as_vector().ok_or_else(|| Error::ConeMismatch {
        left: v.cone().to_string(),
        right: "orthant".into(),
    })
}

/// Expands the per-block vertex choices into the `m x n` gain.
pub fn assemble_gain(p: &SspProblem, actions: &[BlockAction]) -> DMatrix<f64> {
    let mut gain = DMatrix::zeros(p.m(), p.n());
    for (i, action) in actions.iter().enumerate() {
        if let Some(k) = action {
            for j in 0..p.n() {
                gain[(*k, j)] = p.e[(i, j)];
            }
        }
    }
    gain
}

/// One application of the Bellman map: `(lambda', K)`.
pub fn bellman_update(
    p: &SspProblem,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if lambda.len() != p.n() {
        return Err(Error::ShapeMismatch(format!(
            "lambda has length {}, expected {}",
            lambda.len(),
            p.n()
        )));
    }
    if let Some((index, value)) = lambda
        .iter()
        .enumerate()
        .find(|(_, v)| **v < -MEMBERSHIP_TOL)
    {
        return Err(Error::NegativeLambda {
            index,
            value: *value,
        });
    }
    let (next, actions) =
        bellman_sweep(&SspBellman::new(p), &ValueObject::Orthant(lambda.clone()))?;
    let next = next.as_vector().cloned().expect("orthant map");
    Ok((next, assemble_gain(p, &actions)))
}

#[derive(Debug, Clone)]
pub struct SspSolution {
    pub lambda: DVector<f64>,
    pub gain: DMatrix<f64>,
    pub trace: ConvergenceTrace,
    pub stationarity_residual: f64,
    /// Spectral radius of `A + B K`.
    pub closed_loop_radius: f64,
}

/// Solves the SSP Bellman equation from `lambda = 0` and certifies the result.
pub fn solve_ssp(p: &SspProblem, cfg: &SolveConfig) -> Result<SspSolution> {
    solve_ssp_observed(p, cfg, |_, _| {})
}

/// [`solve_ssp`] with a callback receiving every iterate.
pub fn solve_ssp_observed<F>(p: &SspProblem, cfg: &SolveConfig, observe: F) -> Result<SspSolution>
where
    F: FnMut(usize, &ValueObject),
{
    if p.has_no_control_authority() {
        let rho = spectral_radius(&p.a)?;
        if rho >= 1.0 - 1e-12 {
            return Err(Error::Diverged {
                iteration: 0,
                reason: format!("no control authority and spectral radius of A is {rho}"),
            });
        }
    }

    let map = SspBellman::new(p);
    let start = ValueObject::zero(map.cone());
    let fp = fixed_point_solve_observed(&map, &start, cfg, observe)?;
    let lambda = fp.value.as_vector().cloned().expect("orthant map");
    let gain = assemble_gain(p, &fp.minimizers);

    if !validate_gain(p, &gain)? {
        return Err(Error::CertificationFailed(
            "optimal gain violates the input constraints".into(),
        ));
    }
    let closed = p.closed_loop(&gain);
    if let Some(v) = closed.iter().find(|v| **v < -GAIN_TOL) {
        return Err(Error::CertificationFailed(format!(
            "closed loop A + BK has a negative entry ({v:e}); the orthant is not invariant"
        )));
    }
    let rho = spectral_radius(&closed)?;
    if rho >= 1.0 {
        return Err(Error::CertificationFailed(format!(
            "closed loop spectral radius {rho} is not below 1"
        )));
    }
    if let Some(i) = lambda.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::CertificationFailed(format!(
            "lambda[{i}] is not positive"
        )));
    }

    Ok(SspSolution {
        lambda,
        gain,
        trace: fp.trace,
        stationarity_residual: fp.stationarity_residual,
        closed_loop_radius: rho,
    })
}

/// Value vector of a fixed stabilizing gain: `(I - (A+BK)^T)^{-1} (s + K^T r)`.
/// The cost from `x0` is `value . x0`.
pub fn gain_value(p: &SspProblem, gain: &DMatrix<f64>) -> Result<DVector<f64>> {
    let closed = p.closed_loop(gain);
    let rho = spectral_radius(&closed)?;
    if rho >= 1.0 {
        return Err(Error::UnstableGain { rho });
    }
    let lhs = DMatrix::identity(p.n(), p.n()) - closed.transpose();
    let rhs = &p.s + gain.tr_mul(&p.r);
    solve_linear(&lhs, &rhs).ok_or(Error::UnstableGain { rho })
}

/// Edge of the graph shorthand. A deterministic edge names its successor in
/// `to`; a stochastic edge gives a full successor distribution in `prob`
/// (length = number of nodes), in which case `to`, if present, must carry
/// positive probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SspEdge {
    pub from: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<usize>,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<Vec<f64>>,
}

impl SspEdge {
    pub fn deterministic(from: usize, to: usize, cost: f64) -> Self {
        Self {
            from,
            to: Some(to),
            cost,
            prob: None,
        }
    }

    /// Successor distribution over all nodes.
    pub fn successors(&self, nodes: usize) -> Vec<f64> {
        match &self.prob {
            Some(p) => p.clone(),
            None => {
                let mut p = vec![0.0; nodes];
                if let Some(t) = self.to {
                    p[t] = 1.0;
                }
                p
            }
        }
    }
}

/// Classical SSP on a graph: each node may pick one outgoing edge per step,
/// pays `s[node] + cost`, and moves along the edge's distribution. Goal nodes
/// are absorbing and free. Doing nothing keeps the mass in place at cost
/// `s[node]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SspGraph {
    pub nodes: usize,
    pub goal: Vec<usize>,
    pub edges: Vec<SspEdge>,
    pub s: Vec<f64>,
}

/// Matrix form of an [`SspGraph`] with the index maps back to the graph.
#[derive(Debug, Clone)]
pub struct CompiledGraph {
    pub problem: SspProblem,
    /// Graph node of each state (non-goal nodes in increasing order).
    pub states: Vec<usize>,
    /// Graph edge of each input.
    pub inputs: Vec<usize>,
}

impl SspGraph {
    pub fn is_goal(&self, node: usize) -> bool {
        self.goal.contains(&node)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::InvalidProblem("graph has no nodes".into()));
        }
        if self.goal.is_empty() {
            return Err(Error::NoGoal);
        }
        if let Some(g) = self.goal.iter().find(|g| **g >= self.nodes) {
            return Err(Error::InvalidProblem(format!("goal node {g} out of range")));
        }
        if self.s.len() != self.nodes {
            return Err(Error::ShapeMismatch(format!(
                "s has length {}, expected {}",
                self.s.len(),
                self.nodes
            )));
        }
        for (k, edge) in self.edges.iter().enumerate() {
            if edge.from >= self.nodes {
                return Err(Error::InvalidProblem(format!(
                    "edge {k}: from {} out of range",
                    edge.from
                )));
            }
            if !(edge.cost >= 0.0) || !edge.cost.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "edge {k}: cost must be finite and >= 0"
                )));
            }
            if let Some(t) = edge.to {
                if t >= self.nodes {
                    return Err(Error::InvalidProblem(format!(
                        "edge {k}: to {t} out of range"
                    )));
                }
            }
            match &edge.prob {
                Some(p) => {
                    if p.len() != self.nodes {
                        return Err(Error::ShapeMismatch(format!(
                            "edge {k}: prob has length {}, expected {}",
                            p.len(),
                            self.nodes
                        )));
                    }
                    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                        return Err(Error::InvalidProblem(format!(
                            "edge {k}: negative probability"
                        )));
                    }
                    let total: f64 = p.iter().sum();
                    if (total - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidProblem(format!(
                            "edge {k}: probabilities sum to {total}"
                        )));
                    }
                    if let Some(t) = edge.to {
                        if p[t] <= 0.0 {
                            return Err(Error::InvalidProblem(format!(
                                "edge {k}: to {t} has zero probability"
                            )));
                        }
                    }
                }
                None => {
                    if edge.to.is_none() {
                        return Err(Error::InvalidProblem(format!(
                            "edge {k}: needs `to` or `prob`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Non-goal nodes from which no sequence of edges reaches the goal set.
    pub fn unreachable_nodes(&self) -> Vec<usize> {
        let mut reaches = vec![false; self.nodes];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &g in &self.goal {
            if !reaches[g] {
                reaches[g] = true;
                queue.push_back(g);
            }
        }
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); self.nodes];
        for edge in &self.edges {
            for (j, p) in edge.successors(self.nodes).iter().enumerate() {
                if *p > 0.0 {
                    incoming[j].push(edge.from);
                }
            }
        }
        while let Some(j) = queue.pop_front() {
            for &i in &incoming[j] {
                if !reaches[i] {
                    reaches[i] = true;
                    queue.push_back(i);
                }
            }
        }
        (0..self.nodes).filter(|i| !reaches[*i]).collect()
    }

    /// Builds `(A, B, s, r, blocks, E)` with `A = I`, `E = I` and one input
    /// per edge leaving a non-goal node.
    pub fn compile(&self) -> Result<CompiledGraph> {
        self.validate()?;
        let states: Vec<usize> = (0..self.nodes).filter(|v| !self.is_goal(*v)).collect();
        if states.is_empty() {
            return Err(Error::InvalidProblem("every node is a goal".into()));
        }
        let n = states.len();
        let mut state_of = vec![None; self.nodes];
        for (i, &node) in states.iter().enumerate() {
            state_of[node] = Some(i);
        }

        let mut inputs = Vec::new();
        let mut block_sizes = vec![0; n];
        for (i, &node) in states.iter().enumerate() {
            for (k, edge) in self.edges.iter().enumerate() {
                if edge.from == node {
                    inputs.push(k);
                    block_sizes[i] += 1;
                }
            }
        }

        let m = inputs.len();
        let mut b = DMatrix::zeros(n, m);
        let mut r = DVector::zeros(m);
        for (col, &k) in inputs.iter().enumerate() {
            let edge = &self.edges[k];
            let from = state_of[edge.from].expect("edge leaves a non-goal node");
            b[(from, col)] -= 1.0;
            for (node, p) in edge.successors(self.nodes).iter().enumerate() {
                if let Some(j) = state_of[node] {
                    b[(j, col)] += p;
                }
            }
            r[col] = edge.cost;
        }
        let s = DVector::from_iterator(n, states.iter().map(|v| self.s[*v]));
        let problem = SspProblem::new(
            DMatrix::identity(n, n),
            b,
            s,
            r,
            block_sizes,
            DMatrix::identity(n, n),
        )?;
        Ok(CompiledGraph {
            problem,
            states,
            inputs,
        })
    }
}

/// Solution of a graph-form SSP mapped back onto graph nodes and edges.
#[derive(Debug, Clone)]
pub struct SspGraphSolution {
    pub compiled: CompiledGraph,
    pub solution: SspSolution,
    /// Cost-to-go per graph node; zero on goals.
    pub node_values: Vec<f64>,
    /// Edge taken by each node under the optimal gain (`None` on goals).
    pub policy: Vec<Option<usize>>,
}

/// Solves a graph-form SSP. Nodes that cannot reach the goal have no finite
/// cost and are reported as divergence before iterating.
pub fn solve_graph(graph: &SspGraph, cfg: &SolveConfig) -> Result<SspGraphSolution> {
    let compiled = graph.compile()?;
    if let Some(node) = graph.unreachable_nodes().first() {
        return Err(Error::Diverged {
            iteration: 0,
            reason: format!("node {node} cannot reach the goal; its cost is unbounded"),
        });
    }
    let solution = solve_ssp(&compiled.problem, cfg)?;
    let mut node_values = vec![0.0; graph.nodes];
    let mut policy = vec![None; graph.nodes];
    for (i, &node) in compiled.states.iter().enumerate() {
        node_values[node] = solution.lambda[i];
        for k in compiled.problem.block_range(i) {
            if solution.gain[(k, i)] > 0.0 {
                policy[node] = Some(compiled.inputs[k]);
            }
        }
    }
    Ok(SspGraphSolution {
        compiled,
        solution,
        node_values,
        policy,
    })
}
