//! Seeded graph matching by Frank–Wolfe on the doubly-stochastic relaxation.
//!
//! The solver maximizes `tr(ref · P tgt Pᵀ)` over permutations `P` that fix
//! the seed correspondences. Seeds are moved to the leading block so that
//! only the free `k × k` block `Q` is optimized; the seed cross terms enter
//! as a constant linear term. Each iteration linearizes, solves an exact
//! assignment problem for the search vertex, and takes the exact line-search
//! step of the quadratic objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{solve_lap, CostMatrix, LapError, Sense};
use crate::graph::{frobenius_distance, permute_graph, trace_objective, Graph, GraphError, MatrixLike, Permutation};
use crate::numeric::next_permutation;
use crate::rng::RngSeed;

pub const BRUTE_FORCE_FREE_MAX: usize = 9;
const STOCHASTIC_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SgmError {
    #[error("dimension mismatch: target has {target} vertices, reference {reference}")]
    DimensionMismatch { target: usize, reference: usize },
    #[error("invalid seeds: {0}")]
    InvalidSeeds(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("{free} free vertices exceed the exhaustive limit of {max}")]
    TooManyFree { free: usize, max: usize },
    #[error(transparent)]
    Lap(#[from] LapError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Known correspondences `(target vertex, reference vertex)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pairs: Vec<(usize, usize)>,
}

impl SeedSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self, SgmError> {
        let mut ti: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut rj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        ti.sort_unstable();
        rj.sort_unstable();
        if ti.windows(2).any(|w| w[0] == w[1]) {
            return Err(SgmError::InvalidSeeds("a target vertex is seeded twice".into()));
        }
        if rj.windows(2).any(|w| w[0] == w[1]) {
            return Err(SgmError::InvalidSeeds("a reference vertex is seeded twice".into()));
        }
        Ok(Self { pairs })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Seeds `v → v` for the first `s` vertices.
    pub fn leading(s: usize) -> Self {
        Self {
            pairs: (0..s).map(|v| (v, v)).collect(),
        }
    }

    /// Seeds `v → truth(v)` for the first `s` target vertices.
    pub fn from_truth(truth: &Permutation, s: usize) -> Self {
        Self {
            pairs: (0..s.min(truth.len())).map(|v| (v, truth.apply(v))).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check(&self, n: usize) -> Result<(), SgmError> {
        if let Some(&(i, j)) = self.pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(SgmError::InvalidSeeds(format!(
                "seed ({i}, {j}) is out of range for n = {n}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Barycenter,
    Identity,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub init: InitMode,
    pub rng: RngSeed,
}

impl Default for SgmOptions {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: 1e-6,
            restarts: 1,
            init: InitMode::Barycenter,
            rng: RngSeed::default(),
        }
    }
}

impl SgmOptions {
    pub fn with_rng(mut self, rng: RngSeed) -> Self {
        self.rng = rng;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    fn check(&self) -> Result<(), SgmError> {
        if self.max_iters == 0 {
            return Err(SgmError::InvalidOptions("max_iters must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(SgmError::InvalidOptions("restarts must be at least 1".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(SgmError::InvalidOptions(format!(
                "tol must be a nonnegative number, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// One matching. `perm` maps target vertices to reference vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub perm: Permutation,
    /// `‖ref − P tgt Pᵀ‖_F`.
    pub objective: f64,
    /// `tr(ref · P tgt Pᵀ)`.
    pub trace_value: f64,
    pub iters: usize,
    pub converged: bool,
    /// Relaxed objective after each Frank–Wolfe step of the winning restart,
    /// starting with the initial point.
    pub history: Vec<f64>,
}

fn finish(
    target: &Graph,
    reference: &DMatrix<f64>,
    perm: Permutation,
    iters: usize,
    converged: bool,
    history: Vec<f64>,
) -> Result<MatchResult, SgmError> {
    let moved = permute_graph(target, &perm)?;
    let objective = frobenius_distance(reference, &moved)?;
    let trace_value = trace_objective(target, reference, &perm)?;
    Ok(MatchResult {
        perm,
        objective,
        trace_value,
        iters,
        converged,
        history,
    })
}

/// Seeded problem in block form: seeds lead, free vertices follow in
/// ascending order on both sides.
struct Blocks {
    n: usize,
    seeds: Vec<(usize, usize)>,
    free_target: Vec<usize>,
    free_ref: Vec<usize>,
    /// Linear term `B₁₂ᵀA₂₁ᵀ + B₂₁A₁₂`, indexed `[ref free a][target free i]`.
    linear: DMatrix<f64>,
    a22: DMatrix<f64>,
    b22: DMatrix<f64>,
    constant: f64,
}

impl Blocks {
    fn new(target: &DMatrix<f64>, reference: &DMatrix<f64>, seeds: &SeedSet) -> Self {
        let n = target.nrows();
        let seeds: Vec<(usize, usize)> = seeds.pairs().to_vec();
        let mut t_used = vec![false; n];
        let mut r_used = vec![false; n];
        for &(i, j) in &seeds {
            t_used[i] = true;
            r_used[j] = true;
        }
        let free_target: Vec<usize> = (0..n).filter(|&v| !t_used[v]).collect();
        let free_ref: Vec<usize> = (0..n).filter(|&v| !r_used[v]).collect();
        let st: Vec<usize> = seeds.iter().map(|p| p.0).collect();
        let sr: Vec<usize> = seeds.iter().map(|p| p.1).collect();
        let pick = |m: &DMatrix<f64>, rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
        };
        let a11 = pick(target, &st, &st);
        let a12 = pick(target, &st, &free_target);
        let a21 = pick(target, &free_target, &st);
        let a22 = pick(target, &free_target, &free_target);
        let b11 = pick(reference, &sr, &sr);
        let b12 = pick(reference, &sr, &free_ref);
        let b21 = pick(reference, &free_ref, &sr);
        let b22 = pick(reference, &free_ref, &free_ref);
        let linear = b12.transpose() * a21.transpose() + &b21 * &a12;
        let constant = (&b11 * &a11).trace();
        Self {
            n,
            seeds,
            free_target,
            free_ref,
            linear,
            a22,
            b22,
            constant,
        }
    }

    fn k(&self) -> usize {
        self.free_target.len()
    }

    /// `B₂₂ Q A₂₂`.
    fn quad(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        &self.b22 * q * &self.a22
    }

    fn value(&self, q: &DMatrix<f64>, quad: &DMatrix<f64>) -> f64 {
        self.constant + self.linear.dot(q) + quad.dot(q)
    }

    fn gradient(&self, q: &DMatrix<f64>, quad: &DMatrix<f64>) -> DMatrix<f64> {
        let transposed = self.b22.transpose() * q * self.a22.transpose();
        &self.linear + quad + transposed
    }

    /// Full permutation from a free-block assignment `target free i → ref free σ(i)`.
    fn embed(&self, sigma: &Permutation) -> Permutation {
        let mut map = vec![0usize; self.n];
        for &(i, j) in &self.seeds {
            map[i] = j;
        }
        for (l, &t) in self.free_target.iter().enumerate() {
            map[t] = self.free_ref[sigma.apply(l)];
        }
        Permutation::new(map).expect("seeded block assignment is a bijection")
    }
}

fn vertex_matrix(sigma: &Permutation) -> DMatrix<f64> {
    // D[σ(i)][i] = 1.
    sigma.to_matrix()
}

fn max_assignment(score: &DMatrix<f64>) -> Result<Permutation, SgmError> {
    Ok(solve_lap(&CostMatrix::new(score.clone())?, Sense::Max).perm)
}

fn initial_point(k: usize, mode: InitMode, rng: RngSeed) -> DMatrix<f64> {
    let bary = DMatrix::from_element(k, k, 1.0 / k as f64);
    match mode {
        InitMode::Barycenter => bary,
        InitMode::Identity => DMatrix::identity(k, k),
        InitMode::Random => {
            // Halfway between the barycenter and a Sinkhorn-balanced uniform
            // matrix. Interior points spread restarts better than vertices.
            use rand::Rng;
            let mut r = rng.rng();
            let raw = DMatrix::from_fn(k, k, |_, _| r.random::<f64>());
            (bary + sinkhorn(raw)) * 0.5
        }
    }
}

fn sinkhorn(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for _ in 0..1000 {
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        for mut col in m.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        if m.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12) {
            break;
        }
    }
    m
}

struct RunOutcome {
    perm: Permutation,
    trace: f64,
    iters: usize,
    converged: bool,
    history: Vec<f64>,
}

fn frank_wolfe(
    blocks: &Blocks,
    target: &Graph,
    reference: &DMatrix<f64>,
    mut q: DMatrix<f64>,
    opts: &SgmOptions,
) -> Result<RunOutcome, SgmError> {
    let mut quad = blocks.quad(&q);
    let mut f = blocks.value(&q, &quad);
    let mut history = vec![f];
    let mut last_vertex: Option<Permutation> = None;
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        iters += 1;
        let grad = blocks.gradient(&q, &quad);
        // Rows are target vertices, columns reference vertices.
        let sigma = max_assignment(&grad.transpose())?;
        let d = vertex_matrix(&sigma);
        last_vertex = Some(sigma);
        let delta = &d - &q;
        let b = grad.dot(&delta);
        let c = blocks.quad(&delta).dot(&delta);
        let alpha = if c < 0.0 {
            (-b / (2.0 * c)).clamp(0.0, 1.0)
        } else if b + c > 0.0 {
            1.0
        } else {
            0.0
        };
        if alpha == 0.0 {
            converged = true;
            break;
        }
        q += &delta * alpha;
        quad = blocks.quad(&q);
        let f_new = blocks.value(&q, &quad);
        history.push(f_new);
        let change = (f_new - f).abs();
        f = f_new;
        if change <= opts.tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let projected = project_to_permutation(&q.transpose(), &q.transpose())?;
    let mut best = blocks.embed(&projected);
    let mut best_trace = trace_objective(target, reference, &best)?;
    if let Some(sigma) = last_vertex {
        let candidate = blocks.embed(&sigma);
        let t = trace_objective(target, reference, &candidate)?;
        if t > best_trace {
            best = candidate;
            best_trace = t;
        }
    }
    Ok(RunOutcome {
        perm: best,
        trace: best_trace,
        iters,
        converged,
        history,
    })
}

/// Matches `target` to `reference` honoring `seeds`.
///
/// Restart 0 starts from `opts.init`; every further restart `r` starts from
/// a random interior point drawn from `opts.rng.child(r)`. The best restart
/// by trace wins, earliest on ties.
pub fn sgm_match<M: MatrixLike + ?Sized>(
    target: &Graph,
    reference: &M,
    seeds: &SeedSet,
    opts: &SgmOptions,
) -> Result<MatchResult, SgmError> {
    let reference = reference.matrix();
    let n = target.n();
    if reference.shape() != (n, n) {
        return Err(SgmError::DimensionMismatch {
            target: n,
            reference: reference.nrows(),
        });
    }
    opts.check()?;
    seeds.check(n)?;
    let blocks = Blocks::new(target.weights(), reference, seeds);
    let k = blocks.k();
    if k == 0 {
        let perm = blocks.embed(&Permutation::identity(0));
        return finish(target, reference, perm, 0, true, Vec::new());
    }

    let mut best: Option<RunOutcome> = None;
    for r in 0..opts.restarts {
        let (mode, stream) = if r == 0 {
            (opts.init, opts.rng.child(0))
        } else {
            (InitMode::Random, opts.rng.child(r as u64))
        };
        let q0 = initial_point(k, mode, stream);
        let run = frank_wolfe(&blocks, target, reference, q0, opts)?;
        if best.as_ref().is_none_or(|b| run.trace > b.trace) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    finish(target, reference, run.perm, run.iters, run.converged, run.history)
}

/// Rounds a doubly-stochastic iterate to the permutation maximizing
/// `Σ g[i][σ(i)]` (rows are mapped to columns).
pub fn project_to_permutation(
    d: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<Permutation, SgmError> {
    let (rows, cols) = d.shape();
    if rows != cols || g.shape() != d.shape() {
        return Err(SgmError::NotDoublyStochastic(format!(
            "shapes {:?} and {:?} must be equal and square",
            d.shape(),
            g.shape()
        )));
    }
    if let Some(v) = d.iter().find(|v| !(v.is_finite() && **v >= -STOCHASTIC_TOL)) {
        return Err(SgmError::NotDoublyStochastic(format!("entry {v}")));
    }
    for i in 0..rows {
        let rs: f64 = d.row(i).sum();
        let cs: f64 = d.column(i).sum();
        if (rs - 1.0).abs() > STOCHASTIC_TOL || (cs - 1.0).abs() > STOCHASTIC_TOL {
            return Err(SgmError::NotDoublyStochastic(format!(
                "row {i} sums to {rs}, column {i} sums to {cs}"
            )));
        }
    }
    max_assignment(g)
}

/// Exact optimum of the trace objective over seed-respecting permutations.
/// Free target vertices are assigned in lexicographic enumeration order and
/// the first optimum found is kept.
pub fn brute_force_qap<M: MatrixLike + ?Sized>(
    target: &Graph,
    reference: &M,
    seeds: &SeedSet,
) -> Result<MatchResult, SgmError> {
    let reference = reference.matrix();
    let n = target.n();
    if reference.shape() != (n, n) {
        return Err(SgmError::DimensionMismatch {
            target: n,
            reference: reference.nrows(),
        });
    }
    seeds.check(n)?;
    let blocks = Blocks::new(target.weights(), reference, seeds);
    let k = blocks.k();
    if k > BRUTE_FORCE_FREE_MAX {
        return Err(SgmError::TooManyFree {
            free: k,
            max: BRUTE_FORCE_FREE_MAX,
        });
    }
    let mut sigma: Vec<usize> = (0..k).collect();
    let mut best = (f64::NEG_INFINITY, sigma.clone());
    loop {
        let perm = blocks.embed(&Permutation::new(sigma.clone()).expect("enumerated"));
        let t = trace_objective(target, reference, &perm)?;
        if t > best.0 {
            best = (t, sigma.clone());
        }
        if !next_permutation(&mut sigma) {
            break;
        }
    }
    let perm = blocks.embed(&Permutation::new(best.1).expect("enumerated"));
    finish(target, reference, perm, 0, true, Vec::new())
}
