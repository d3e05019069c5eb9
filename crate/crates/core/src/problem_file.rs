//! JSON problem files.
//!
//! The `"type"` field selects the problem class. Matrices are row-major
//! arrays of rows.
//!
//! ```json
//! {"type": "ssp", "A": [[1]], "B": [[-1]], "s": [1], "r": [2], "blocks": [1], "E": [[1]]}
//! {"type": "ssp-graph", "nodes": 3, "goal": [2], "s": [1, 1, 0],
//!  "edges": [{"from": 0, "to": 1, "cost": 1}, {"from": 1, "prob": [0, 0.5, 0.5], "cost": 2}]}
//! {"type": "lqr", "A": [[1]], "B": [[1]], "Q": [[1]], "R": [[1]]}
//! {"type": "ldp", "Pbar": [[0.5, 0], [0.5, 1]], "s": [1, 0], "goals": [1]}
//! ```
//!
//! LDP transition matrices are column-stochastic: `Pbar[j][i]` is the
//! probability of moving from state `i` to state `j`, so each column sums
//! to one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::LdpProblem;
use crate::lqr::LqrProblem;
use crate::ssp::{SspGraph, SspProblem};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ProblemFile {
    #[serde(rename = "ssp")]
    Ssp {
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
        s: Vec<f64>,
        r: Vec<f64>,
        blocks: Vec<usize>,
        #[serde(rename = "E")]
        e: Rows,
    },
    #[serde(rename = "ssp-graph")]
    SspGraph(SspGraph),
    #[serde(rename = "lqr")]
    Lqr {
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
        #[serde(rename = "Q")]
        q: Rows,
        #[serde(rename = "R")]
        r: Rows,
    },
    #[serde(rename = "ldp")]
    Ldp {
        #[serde(rename = "Pbar")]
        pbar: Rows,
        s: Vec<f64>,
        goals: Vec<usize>,
    },
}

/// A validated problem of any class.
#[derive(Debug, Clone)]
pub enum Problem {
    Ssp(SspProblem),
    SspGraph(SspGraph),
    Lqr(LqrProblem),
    Ldp(LdpProblem),
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Ssp(_) => "ssp",
            Problem::SspGraph(_) => "ssp-graph",
            Problem::Lqr(_) => "lqr",
            Problem::Ldp(_) => "ldp",
        }
    }
}

/// Builds a matrix from rows. `cols` fixes the width when there are no rows
/// to infer it from.
pub fn matrix_from_rows(
    name: &str,
    rows: &[Vec<f64>],
    cols: Option<usize>,
) -> Result<DMatrix<f64>> {
    let width = rows.first().map(Vec::len).or(cols).unwrap_or(0);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::ShapeMismatch(format!(
            "{name}: row {i} has {} entries, expected {width}",
            row.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemFile::Ssp {
                a,
                b,
                s,
                r,
                blocks,
                e,
            } => {
                let n = s.len();
                Ok(Problem::Ssp(SspProblem::new(
                    matrix_from_rows("A", a, Some(n))?,
                    matrix_from_rows("B", b, Some(r.len()))?,
                    DVector::from_column_slice(s),
                    DVector::from_column_slice(r),
                    blocks.clone(),
                    matrix_from_rows("E", e, Some(n))?,
                )?))
            }
            ProblemFile::SspGraph(g) => {
                g.validate()?;
                Ok(Problem::SspGraph(g.clone()))
            }
            ProblemFile::Lqr { a, b, q, r } => Ok(Problem::Lqr(LqrProblem::new(
                matrix_from_rows("A", a, None)?,
                matrix_from_rows("B", b, None)?,
                matrix_from_rows("Q", q, None)?,
                matrix_from_rows("R", r, None)?,
            )?)),
            ProblemFile::Ldp { pbar, s, goals } => Ok(Problem::Ldp(LdpProblem::new(
                matrix_from_rows("Pbar", pbar, None)?,
                DVector::from_column_slice(s),
                goals.clone(),
            )?)),
        }
    }

    pub fn from_ssp(p: &SspProblem) -> Self {
        ProblemFile::Ssp {
            a: rows_of(p.a()),
            b: rows_of(p.b()),
            s: p.s().iter().copied().collect(),
            r: p.r().iter().copied().collect(),
            blocks: p.block_sizes().to_vec(),
            e: rows_of(p.e()),
        }
    }

    pub fn from_lqr(p: &LqrProblem) -> Self {
        ProblemFile::Lqr {
            a: rows_of(p.a()),
            b: rows_of(p.b()),
            q: rows_of(p.q()),
            r: rows_of(p.r()),
        }
    }

    pub fn from_ldp(p: &LdpProblem) -> Self {
        ProblemFile::Ldp {
            pbar: rows_of(p.pbar()),
            s: p.s().iter().copied().collect(),
            goals: p.goals().to_vec(),
        }
    }
}
