use std::time::Instant;

use conebellman::engine::SolveConfig;
use conebellman::error::{Error, Result};
use conebellman::instances::{random_ldp, stabilizable_lqr, stochastic_graph};
use conebellman::ldp::solve_ldp;
use conebellman::lqr::solve_lqr;
use conebellman::ssp::solve_graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Class {
    Ssp,
    Lqr,
    Ldp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub iters: usize,
    pub wall_ns: u128,
    pub residual: f64,
}

/// Parses a comma-separated list of positive sizes.
pub fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    let sizes = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok().filter(|n| *n >= 1))
        .collect::<Option<Vec<_>>>();
    sizes.ok_or_else(|| Error::InvalidProblem(format!("bad size list {text:?}")))
}

/// Generates the instance for `(class, n, seed)`, solves it and times the
/// solve.
pub fn run(class: Class, n: usize, seed: u64, cfg: &SolveConfig) -> Result<BenchRow> {
    let (iters, residual, wall_ns) = match class {
        Class::Ssp => {
            let g = stochastic_graph(n + 1, seed)?;
            let start = Instant::now();
            let sol = solve_graph(&g, cfg)?;
            let wall = start.elapsed().as_nanos();
            (
                sol.solution.trace.len(),
                sol.solution.stationarity_residual,
                wall,
            )
        }
        Class::Lqr => {
            let p = stabilizable_lqr(n, n.div_ceil(2), seed)?;
            let start = Instant::now();
            let sol = solve_lqr(&p, cfg)?;
            let wall = start.elapsed().as_nanos();
            (sol.trace.len(), sol.riccati_residual, wall)
        }
        Class::Ldp => {
            let p = random_ldp(n, 1, seed)?;
            let start = Instant::now();
            let sol = solve_ldp(&p, cfg)?;
            let wall = start.elapsed().as_nanos();
            (sol.trace.len(), sol.bellman_residual, wall)
        }
    };
    Ok(BenchRow {
        n,
        iters,
        wall_ns,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_lists() {
        assert_eq!(parse_sizes("10,50, 100").unwrap(), vec![10, 50, 100]);
        assert!(parse_sizes("").is_err());
        assert!(parse_sizes("10,,5").is_err());
        assert!(parse_sizes("0").is_err());
        assert!(parse_sizes("x").is_err());
    }
}
