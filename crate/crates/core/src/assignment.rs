//! Exact dense linear assignment.
//!
//! [`solve_lap`] runs the shortest augmenting path method with row and column
//! potentials (O(n³)), then walks the optimal face to return the
//! lexicographically smallest optimal assignment. [`brute_force_lap`] is the
//! exhaustive reference with the same tie-breaking rule.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Permutation;
use crate::numeric::{compensated_sum, next_permutation};

pub const BRUTE_FORCE_MAX: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LapError {
    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("cost matrix is empty")]
    Empty,
    #[error("cost entry ({i}, {j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("exhaustive search limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

/// Square matrix of finite costs; row `i` is assigned to column `σ(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    values: DMatrix<f64>,
}

impl CostMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self, LapError> {
        let (rows, cols) = values.shape();
        if rows != cols {
            return Err(LapError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(LapError::Empty);
        }
        for j in 0..cols {
            for i in 0..rows {
                if !values[(i, j)].is_finite() {
                    return Err(LapError::NonFinite { i, j });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LapError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
            return Err(LapError::NotSquare { rows: n, cols });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    fn total(&self, perm: &[usize]) -> f64 {
        compensated_sum(perm.iter().enumerate().map(|(i, &j)| self.values[(i, j)]))
    }

    fn tolerance(&self) -> f64 {
        1e-10 * (1.0 + self.values.amax())
    }
}

/// Optimal assignment; `perm.apply(i)` is the column given to row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub perm: Permutation,
    pub total: f64,
    /// Potentials of the min-cost problem actually solved (costs negated
    /// for [`Sense::Max`]): `row[i] + col[j] <= c[i][j]`, with equality on
    /// assigned pairs up to rounding.
    pub row_duals: Vec<f64>,
    pub col_duals: Vec<f64>,
}

pub fn solve_lap(c: &CostMatrix, sense: Sense) -> Assignment {
    let n = c.n();
    let sign = match sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let cost = |i: usize, j: usize| sign * c.values[(i, j)];

    // Potentials and matching are 1-indexed; slot 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let row_duals: Vec<f64> = u[1..].to_vec();
    let col_duals: Vec<f64> = v[1..].to_vec();
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[owner[j] - 1] = j - 1;
    }

    let tol = c.tolerance();
    let tight = |i: usize, j: usize| cost(i, j) - row_duals[i] - col_duals[j] <= tol;
    lexicographic_descent(n, &mut col_of, tight);

    let total = c.total(&col_of);
    Assignment {
        perm: Permutation::new(col_of).expect("assignment is a bijection"),
        total,
        row_duals,
        col_duals,
    }
}

/// Rewrites the perfect matching `col_of` (which uses only tight edges) into
/// the lexicographically smallest perfect matching of the tight subgraph.
fn lexicographic_descent<F: Fn(usize, usize) -> bool>(n: usize, col_of: &mut [usize], tight: F) {
    let mut row_of = vec![0usize; n];
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut parent_col = vec![usize::MAX; n];
    let mut visited = vec![false; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        let freed = col_of[i];
        if !(0..freed).any(|j| tight(i, j) && row_of[j] > i) {
            continue;
        }
        // Rows below i are frozen. Find every free row that can hand its
        // column along an alternating path ending at `freed`.
        visited.iter_mut().for_each(|x| *x = false);
        queue.clear();
        queue.push_back(freed);
        while let Some(c) = queue.pop_front() {
            for r in (i + 1)..n {
                if !visited[r] && tight(r, c) {
                    visited[r] = true;
                    parent_col[r] = c;
                    queue.push_back(col_of[r]);
                }
            }
        }
        let Some(j) = (0..freed).find(|&j| {
            let k = row_of[j];
            k > i && visited[k] && tight(i, j)
        }) else {
            continue;
        };
        // Shift along the path: each row moves to its parent column.
        let mut r = row_of[j];
        loop {
            let next_col = parent_col[r];
            let displaced = if next_col == freed { None } else { Some(row_of[next_col]) };
            col_of[r] = next_col;
            row_of[next_col] = r;
            match displaced {
                Some(d) => r = d,
                None => break,
            }
        }
        col_of[i] = j;
        row_of[j] = i;
    }
}

/// Exhaustive optimum for `n <= 9`, returning the lexicographically first
/// permutation whose total is within rounding of the best.
pub fn brute_force_lap(c: &CostMatrix, sense: Sense) -> Result<Assignment, LapError> {
    let n = c.n();
    if n > BRUTE_FORCE_MAX {
        return Err(LapError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    let better = |a: f64, b: f64| match sense {
        Sense::Min => a < b,
        Sense::Max => a > b,
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = c.total(&perm);
    while next_permutation(&mut perm) {
        let t = c.total(&perm);
        if better(t, best) {
            best = t;
        }
    }
    let slack = n as f64 * c.tolerance();
    let within = |t: f64| match sense {
        Sense::Min => t <= best + slack,
        Sense::Max => t >= best - slack,
    };
    // `perm` is sorted again after the full cycle.
    loop {
        let t = c.total(&perm);
        if within(t) {
            return Ok(Assignment {
                perm: Permutation::new(perm).expect("enumerated a bijection"),
                total: t,
                row_duals: Vec::new(),
                col_duals: Vec::new(),
            });
        }
        if !next_permutation(&mut perm) {
            unreachable!("the optimum is always revisited");
        }
    }
}
