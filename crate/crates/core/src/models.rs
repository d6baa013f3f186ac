//! Random graph models: Erdős–Rényi, stochastic block models, COSIE, and the
//! bit-flip noise channel, plus their closed-form moments.
//!
//! Every sampler walks the upper triangle in row-major order and consumes
//! exactly one `u64` from the stream per vertex pair, so the draw for pair
//! `k` depends only on `(seed, stream, k)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, GraphKind, MatrixLike, WeightedMean};
use crate::rng::RngSeed;

const PROB_SLACK: f64 = 1e-12;
const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("index {index} out of range for {len} graphs")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("degenerate parameters: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn check_probability(p: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ModelError::InvalidProbability(p))
    }
}

/// Block sizes plus a symmetric matrix of block-pair edge probabilities.
/// Vertices are assigned to blocks contiguously in the order of `sizes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    sizes: Vec<usize>,
    lambda: Vec<Vec<f64>>,
}

impl SbmSpec {
    pub fn new(sizes: Vec<usize>, lambda: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let k = sizes.len();
        if k == 0 {
            return Err(ModelError::InvalidSpec("no blocks".into()));
        }
        if sizes.contains(&0) {
            return Err(ModelError::InvalidSpec("block sizes must be positive".into()));
        }
        if lambda.len() != k || lambda.iter().any(|row| row.len() != k) {
            return Err(ModelError::InvalidSpec(format!(
                "lambda must be {k}x{k} to match the block sizes"
            )));
        }
        for a in 0..k {
            for b in 0..k {
                check_probability(lambda[a][b])?;
                if lambda[a][b] != lambda[b][a] {
                    return Err(ModelError::InvalidSpec(format!(
                        "lambda is not symmetric at ({a}, {b})"
                    )));
                }
            }
        }
        Ok(Self { sizes, lambda })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Block label of every vertex.
    pub fn membership(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect()
    }

    /// Edge probability matrix with a zero diagonal.
    pub fn probability_matrix(&self) -> DMatrix<f64> {
        let z = self.membership();
        let n = z.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                self.lambda[z[i]][z[j]]
            }
        })
    }
}

/// Shared orthonormal basis `U` and per-graph score matrices `R⁽ⁱ⁾`; graph
/// `i` has edge probabilities `U R⁽ⁱ⁾ Uᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CosieSpec {
    u: DMatrix<f64>,
    scores: Vec<DMatrix<f64>>,
}

fn check_orthonormal(u: &DMatrix<f64>) -> Result<(), ModelError> {
    let d = u.ncols();
    if d == 0 || d > u.nrows() {
        return Err(ModelError::InvalidSpec(format!(
            "basis must have between 1 and n columns, got {d} for n = {}",
            u.nrows()
        )));
    }
    let gram = u.transpose() * u;
    let err = (gram - DMatrix::<f64>::identity(d, d)).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(ModelError::InvalidSpec(format!(
            "basis columns are not orthonormal (max deviation {err:e})"
        )));
    }
    Ok(())
}

fn check_scores(u: &DMatrix<f64>, scores: &[DMatrix<f64>]) -> Result<(), ModelError> {
    let d = u.ncols();
    if scores.is_empty() {
        return Err(ModelError::InvalidSpec("no score matrices".into()));
    }
    for (idx, r) in scores.iter().enumerate() {
        if r.shape() != (d, d) {
            return Err(ModelError::InvalidSpec(format!(
                "score matrix {idx} has shape {:?}, expected ({d}, {d})",
                r.shape()
            )));
        }
        if (r - r.transpose()).abs().max() > ORTHONORMAL_TOL {
            return Err(ModelError::InvalidSpec(format!(
                "score matrix {idx} is not symmetric"
            )));
        }
    }
    Ok(())
}

impl CosieSpec {
    pub fn new(u: DMatrix<f64>, scores: Vec<DMatrix<f64>>) -> Result<Self, ModelError> {
        check_orthonormal(&u)?;
        check_scores(&u, &scores)?;
        let spec = Self { u, scores };
        for i in 0..spec.scores.len() {
            let p = spec.raw_probabilities(i);
            let n = p.nrows();
            for a in 0..n {
                for b in (a + 1)..n {
                    let v = p[(a, b)];
                    if !(-PROB_SLACK..=1.0 + PROB_SLACK).contains(&v) {
                        return Err(ModelError::InvalidSpec(format!(
                            "graph {i} has edge probability {v} at ({a}, {b})"
                        )));
                    }
                }
            }
        }
        Ok(spec)
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn scores(&self) -> &[DMatrix<f64>] {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn raw_probabilities(&self, i: usize) -> DMatrix<f64> {
        let p = &self.u * &self.scores[i] * self.u.transpose();
        // Symmetrize to remove rounding asymmetry from the triple product.
        (&p + p.transpose()) * 0.5
    }

    /// Edge probability matrix of graph `i`, hollow and clamped to [0, 1].
    pub fn probability_matrix(&self, i: usize) -> Result<DMatrix<f64>, ModelError> {
        if i >= self.scores.len() {
            return Err(ModelError::IndexOutOfRange {
                index: i,
                len: self.scores.len(),
            });
        }
        let mut p = self.raw_probabilities(i).map(|v| v.clamp(0.0, 1.0));
        p.fill_diagonal(0.0);
        Ok(p)
    }
}

/// Output of [`mase_embed`]: a shared basis and unconstrained scores.
#[derive(Clone, Debug, PartialEq)]
pub struct JointEmbedding {
    pub u: DMatrix<f64>,
    pub scores: Vec<DMatrix<f64>>,
}

impl JointEmbedding {
    /// Fails if any reconstructed probability leaves [0, 1].
    pub fn to_cosie(&self) -> Result<CosieSpec, ModelError> {
        CosieSpec::new(self.u.clone(), self.scores.clone())
    }

    /// Reconstructions `U R⁽ⁱ⁾ Uᵀ` with a zero diagonal.
    pub fn reconstructions(&self) -> Vec<DMatrix<f64>> {
        self.scores
            .iter()
            .map(|r| {
                let p = &self.u * r * self.u.transpose();
                let mut p = (&p + p.transpose()) * 0.5;
                p.fill_diagonal(0.0);
                p
            })
            .collect()
    }

    /// Reconstructions clipped into [0, 1], with the number of off-diagonal
    /// entries (counted once per unordered pair) that needed clipping.
    pub fn clipped_probabilities(&self) -> (Vec<DMatrix<f64>>, usize) {
        let mut clipped = 0;
        let mats = self
            .reconstructions()
            .into_iter()
            .map(|p| {
                let n = p.nrows();
                for a in 0..n {
                    for b in (a + 1)..n {
                        if !(0.0..=1.0).contains(&p[(a, b)]) {
                            clipped += 1;
                        }
                    }
                }
                p.map(|v| v.clamp(0.0, 1.0))
            })
            .collect();
        (mats, clipped)
    }
}

/// Flip probability for the bit-flip channel.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    Uniform(f64),
    PerPair(DMatrix<f64>),
}

impl NoiseSpec {
    pub fn uniform(p: f64) -> Result<Self, ModelError> {
        check_probability(p)?;
        Ok(Self::Uniform(p))
    }

    /// Diagonal entries are ignored.
    pub fn per_pair(q: DMatrix<f64>) -> Result<Self, ModelError> {
        let (rows, cols) = q.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols }.into());
        }
        for i in 0..rows {
            for j in (i + 1)..cols {
                check_probability(q[(i, j)])?;
                if q[(i, j)] != q[(j, i)] {
                    return Err(GraphError::Asymmetric { i, j }.into());
                }
            }
        }
        Ok(Self::PerPair(q))
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            Self::Uniform(p) => *p,
            Self::PerPair(q) => q[(i, j)],
        }
    }
}

/// Samples a binary graph with independent edges of the given probabilities
/// (upper triangle read; the matrix must be square with entries in [0, 1]).
pub fn sample_from_probabilities(p: &DMatrix<f64>, seed: RngSeed) -> Result<Graph, ModelError> {
    let (rows, cols) = p.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols }.into());
    }
    if rows == 0 {
        return Err(GraphError::NoVertices.into());
    }
    for i in 0..rows {
        for j in (i + 1)..rows {
            check_probability(p[(i, j)])?;
        }
    }
    Ok(sample_unchecked(rows, seed, |i, j| p[(i, j)]))
}

fn sample_unchecked<F: Fn(usize, usize) -> f64>(n: usize, seed: RngSeed, prob: F) -> Graph {
    let mut rng = seed.rng();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let u: f64 = rng.random();
            if u < prob(i, j) {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
    }
    Graph::from_parts_unchecked(w, GraphKind::Binary)
}

pub fn sample_er(n: usize, p: f64, seed: RngSeed) -> Result<Graph, ModelError> {
    check_probability(p)?;
    if n == 0 {
        return Err(GraphError::NoVertices.into());
    }
    Ok(sample_unchecked(n, seed, |_, _| p))
}

pub fn sample_sbm(spec: &SbmSpec, seed: RngSeed) -> Result<Graph, ModelError> {
    let z = spec.membership();
    Ok(sample_unchecked(z.len(), seed, |i, j| spec.lambda[z[i]][z[j]]))
}

pub fn sample_cosie(spec: &CosieSpec, i: usize, seed: RngSeed) -> Result<Graph, ModelError> {
    let p = spec.probability_matrix(i)?;
    Ok(sample_unchecked(p.nrows(), seed, |a, b| p[(a, b)]))
}

/// Bit-flip channel: each vertex pair is toggled independently with its
/// flip probability. The diagonal is never touched.
pub fn bitflip(g: &Graph, noise: &NoiseSpec, seed: RngSeed) -> Result<Graph, ModelError> {
    if !g.is_binary() {
        return Err(GraphError::RequiresBinary.into());
    }
    let n = g.n();
    if let NoiseSpec::PerPair(q) = noise {
        if q.nrows() != n {
            return Err(ModelError::DimensionMismatch {
                left: n,
                right: q.nrows(),
            });
        }
    }
    let mut rng = seed.rng();
    let mut w = g.weights().clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let u: f64 = rng.random();
            if u < noise.at(i, j) {
                let flipped = 1.0 - w[(i, j)];
                w[(i, j)] = flipped;
                w[(j, i)] = flipped;
            }
        }
    }
    Ok(Graph::from_parts_unchecked(w, GraphKind::Binary))
}

/// Entry-wise mean of the bit-flip channel applied to edge probabilities
/// `lambda`: `lambda (1 - 2p) + p` off the diagonal.
pub fn expected_bitflip<M: MatrixLike + ?Sized>(
    lambda: &M,
    p: f64,
) -> Result<WeightedMean, ModelError> {
    check_probability(p)?;
    let m = lambda.matrix();
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols }.into());
    }
    for i in 0..rows {
        for j in 0..cols {
            if i != j {
                check_probability(m[(i, j)])?;
            }
            if m[(i, j)] != m[(j, i)] {
                return Err(GraphError::Asymmetric { i, j }.into());
            }
        }
    }
    let out = DMatrix::from_fn(rows, cols, |i, j| {
        if i == j {
            0.0
        } else {
            m[(i, j)] * (1.0 - 2.0 * p) + p
        }
    });
    Ok(WeightedMean::from_matrix_unchecked(out))
}

/// Correlation between the same edge in two independent bit-flips (rate `s`)
/// of one ER(`p`) graph.
pub fn er_pair_correlation(p: f64, s: f64) -> Result<f64, ModelError> {
    check_probability(p)?;
    check_probability(s)?;
    let marginal = p + s - 2.0 * s * p;
    let denom = marginal * (1.0 - marginal);
    if denom <= 0.0 {
        return Err(ModelError::Degenerate(format!(
            "edge marginal {marginal} is deterministic for p = {p}, s = {s}"
        )));
    }
    Ok(p * (1.0 - p) * (1.0 - 2.0 * s).powi(2) / denom)
}

/// Eigenpairs of a symmetric matrix, ordered by decreasing `key(λ)` with
/// ties broken by original index, each eigenvector sign-fixed so its
/// largest-magnitude entry is positive.
pub(crate) fn sorted_eigen(
    m: &DMatrix<f64>,
    key: impl Fn(f64) -> f64,
) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        key(eig.eigenvalues[b])
            .partial_cmp(&key(eig.eigenvalues[a]))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let n = m.nrows();
    let mut vecs = DMatrix::zeros(n, order.len());
    let mut vals = Vec::with_capacity(order.len());
    for (c, &k) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        fix_sign(col.as_mut_slice());
        vecs.set_column(c, &col);
        vals.push(eig.eigenvalues[k]);
    }
    (vals, vecs)
}

pub(crate) fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|&v| v < 0.0) {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Joint spectral embedding of a graph collection into a shared
/// `d`-dimensional subspace.
///
/// Each graph contributes its top-`d` eigenvectors (by `|λ|`) scaled by
/// `√|λ|`; the shared basis is the leading `d` left singular vectors of the
/// concatenation, and scores are `Uᵀ A_i U`.
pub fn mase_embed(gs: &[Graph], d: usize) -> Result<JointEmbedding, ModelError> {
    let first = gs.first().ok_or(GraphError::EmptyList)?;
    let n = first.n();
    if let Some(bad) = gs.iter().find(|g| g.n() != n) {
        return Err(ModelError::DimensionMismatch {
            left: n,
            right: bad.n(),
        });
    }
    if d == 0 || d > n {
        return Err(ModelError::InvalidSpec(format!(
            "embedding dimension {d} must be in 1..={n}"
        )));
    }
    let mut stacked = DMatrix::zeros(n, d * gs.len());
    for (gi, g) in gs.iter().enumerate() {
        let (vals, vecs) = sorted_eigen(g.weights(), f64::abs);
        for c in 0..d {
            let scale = vals[c].abs().sqrt();
            stacked.set_column(gi * d + c, &(vecs.column(c) * scale));
        }
    }
    let gram = &stacked * stacked.transpose();
    let (_, basis) = sorted_eigen(&gram, |v| v);
    let u = basis.columns(0, d).into_owned();
    let scores = gs
        .iter()
        .map(|g| {
            let r = u.transpose() * g.weights() * &u;
            (&r + r.transpose()) * 0.5
        })
        .collect();
    Ok(JointEmbedding { u, scores })
}
