//! Dense graphs, permutations and the algebra the matchers are built on.
//!
//! Every permutation acts on a graph as `P g Pᵀ`, where the matrix view of a
//! permutation `p` has `P[p(i)][i] = 1`. Under that convention
//! `permute_graph(g, p)[p(i)][p(j)] == g[i][j]`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::next_permutation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("graph must have at least one vertex")]
    NoVertices,
    #[error("entry ({i}, {j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("adjacency matrix is not symmetric at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },
    #[error("diagonal entry {i} is nonzero")]
    NonHollow { i: usize },
    #[error("binary graph has entry {value} at ({i}, {j})")]
    NotBinary { i: usize, j: usize, value: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("operation requires a binary graph")]
    RequiresBinary,
    #[error("graph list is empty")]
    EmptyList,
    #[error("invalid averaging weights: {0}")]
    InvalidWeights(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("graph too large for exhaustive search: n = {n} > {max}")]
    TooLarge { n: usize, max: usize },
}

/// Anything that exposes a square real matrix.
pub trait MatrixLike {
    fn matrix(&self) -> &DMatrix<f64>;

    fn order(&self) -> usize {
        self.matrix().nrows()
    }
}

impl MatrixLike for DMatrix<f64> {
    fn matrix(&self) -> &DMatrix<f64> {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Binary,
    Weighted,
}

/// Undirected, loop-free graph stored as a dense symmetric hollow matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    weights: DMatrix<f64>,
    kind: GraphKind,
}

fn check_symmetric_hollow(m: &DMatrix<f64>) -> Result<(), GraphError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    for j in 0..cols {
        for i in 0..rows {
            if !m[(i, j)].is_finite() {
                return Err(GraphError::NonFinite { i, j });
            }
        }
    }
    for i in 0..rows {
        if m[(i, i)] != 0.0 {
            return Err(GraphError::NonHollow { i });
        }
        for j in (i + 1)..cols {
            if m[(i, j)] != m[(j, i)] {
                return Err(GraphError::Asymmetric { i, j });
            }
        }
    }
    Ok(())
}

impl Graph {
    pub fn new(weights: DMatrix<f64>, kind: GraphKind) -> Result<Self, GraphError> {
        if weights.nrows() == 0 {
            return Err(GraphError::NoVertices);
        }
        check_symmetric_hollow(&weights)?;
        if kind == GraphKind::Binary {
            for j in 0..weights.ncols() {
                for i in 0..weights.nrows() {
                    let value = weights[(i, j)];
                    if value != 0.0 && value != 1.0 {
                        return Err(GraphError::NotBinary { i, j, value });
                    }
                }
            }
        }
        Ok(Self { weights, kind })
    }

    pub fn binary(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        Self::new(weights, GraphKind::Binary)
    }

    pub fn weighted(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        Self::new(weights, GraphKind::Weighted)
    }

    /// Caller guarantees the invariants (symmetric, hollow, binary if flagged).
    pub(crate) fn from_parts_unchecked(weights: DMatrix<f64>, kind: GraphKind) -> Self {
        debug_assert!(check_symmetric_hollow(&weights).is_ok());
        Self { weights, kind }
    }

    pub fn empty(n: usize) -> Self {
        assert!(n > 0, "graph must have at least one vertex");
        Self {
            weights: DMatrix::zeros(n, n),
            kind: GraphKind::Binary,
        }
    }

    pub fn complete(n: usize) -> Self {
        assert!(n > 0, "graph must have at least one vertex");
        Self {
            weights: DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
            kind: GraphKind::Binary,
        }
    }

    /// Binary graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::NoVertices);
        }
        let mut w = DMatrix::zeros(n, n);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::DimensionMismatch {
                    left: u.max(v) + 1,
                    right: n,
                });
            }
            if u == v {
                return Err(GraphError::NonHollow { i: u });
            }
            w[(u, v)] = 1.0;
            w[(v, u)] = 1.0;
        }
        Ok(Self {
            weights: w,
            kind: GraphKind::Binary,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn is_binary(&self) -> bool {
        self.kind == GraphKind::Binary
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.weights
    }

    /// Number of nonzero entries above the diagonal.
    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.weights[(i, j)] != 0.0)
            .count()
    }

    /// Fraction of vertex pairs carrying an edge.
    pub fn density(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        self.edge_count() as f64 / (n * (n - 1) / 2) as f64
    }

    /// Converts to a binary graph, keeping every nonzero entry as an edge.
    pub fn binarized(&self) -> Graph {
        Graph {
            weights: self.weights.map(|w| if w != 0.0 { 1.0 } else { 0.0 }),
            kind: GraphKind::Binary,
        }
    }

    /// True when the only automorphism is the identity. Exhaustive, so only
    /// available for n <= 8.
    pub fn is_asymmetric(&self) -> Result<bool, GraphError> {
        const MAX: usize = 8;
        let n = self.n();
        if n > MAX {
            return Err(GraphError::TooLarge { n, max: MAX });
        }
        let mut map: Vec<usize> = (0..n).collect();
        while next_permutation(&mut map) {
            let fixes = (0..n).all(|i| {
                (0..n).all(|j| self.weights[(map[i], map[j])] == self.weights[(i, j)])
            });
            if fixes {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl MatrixLike for Graph {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

/// Bijection on `{0, …, n-1}`; `map[i]` is the image of vertex `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = GraphError;

    fn try_from(map: Vec<usize>) -> Result<Self, Self::Error> {
        Permutation::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self, GraphError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for (i, &v) in map.iter().enumerate() {
            if v >= n {
                return Err(GraphError::InvalidPermutation(format!(
                    "image {v} of {i} is out of range for n = {n}"
                )));
            }
            if seen[v] {
                return Err(GraphError::InvalidPermutation(format!(
                    "image {v} appears twice"
                )));
            }
            seen[v] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    /// Swaps `a` and `b`, fixing everything else.
    pub fn transposition(n: usize, a: usize, b: usize) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.swap(a, b);
        Self { map }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    /// Reads the permutation off a 0/1 matrix laid out as `P[p(i)][i] = 1`.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self, GraphError> {
        let (rows, cols) = m.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        let mut map = Vec::with_capacity(cols);
        for i in 0..cols {
            let ones: Vec<usize> = (0..rows).filter(|&a| m[(a, i)] == 1.0).collect();
            if ones.len() != 1 || (0..rows).any(|a| m[(a, i)] != 0.0 && m[(a, i)] != 1.0) {
                return Err(GraphError::InvalidPermutation(format!(
                    "column {i} is not a unit vector"
                )));
            }
            map.push(ones[0]);
        }
        Self::new(map)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// Number of vertices not mapped to themselves.
    pub fn moved_count(&self) -> usize {
        self.map.iter().enumerate().filter(|&(i, &v)| i != v).count()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Self { map: inv }
    }

    /// `self ∘ inner`, i.e. `i ↦ self(inner(i))`.
    pub fn compose(&self, inner: &Permutation) -> Self {
        assert_eq!(self.len(), inner.len(), "composing permutations of different size");
        Self {
            map: inner.map.iter().map(|&v| self.map[v]).collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &v) in self.map.iter().enumerate() {
            m[(v, i)] = 1.0;
        }
        m
    }
}

/// Entry-wise (weighted) average of graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMean {
    values: DMatrix<f64>,
}

impl WeightedMean {
    pub fn new(values: DMatrix<f64>) -> Result<Self, GraphError> {
        if values.nrows() == 0 {
            return Err(GraphError::NoVertices);
        }
        check_symmetric_hollow(&values)?;
        Ok(Self { values })
    }

    pub(crate) fn from_matrix_unchecked(values: DMatrix<f64>) -> Self {
        Self { values }
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

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }
}

impl MatrixLike for WeightedMean {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Streaming version of [`mean_graph`] that never holds more than one graph.
#[derive(Clone, Debug)]
pub struct MeanAccumulator {
    sum: DMatrix<f64>,
    total_weight: f64,
    count: usize,
}

impl MeanAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            sum: DMatrix::zeros(n, n),
            total_weight: 0.0,
            count: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.sum.nrows()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, g: &Graph) -> Result<(), GraphError> {
        self.add_weighted(g, 1.0)
    }

    pub fn add_weighted(&mut self, g: &Graph, weight: f64) -> Result<(), GraphError> {
        if g.n() != self.n() {
            return Err(GraphError::DimensionMismatch {
                left: self.n(),
                right: g.n(),
            });
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(GraphError::InvalidWeights(format!(
                "weight {weight} is not a nonnegative finite number"
            )));
        }
        self.sum += g.weights() * weight;
        self.total_weight += weight;
        self.count += 1;
        Ok(())
    }

    /// Merges another accumulator of the same order.
    pub fn merge(&mut self, other: &MeanAccumulator) -> Result<(), GraphError> {
        if other.n() != self.n() {
            return Err(GraphError::DimensionMismatch {
                left: self.n(),
                right: other.n(),
            });
        }
        self.sum += &other.sum;
        self.total_weight += other.total_weight;
        self.count += other.count;
        Ok(())
    }

    pub fn finish(&self) -> Result<WeightedMean, GraphError> {
        if self.count == 0 {
            return Err(GraphError::EmptyList);
        }
        if self.total_weight <= 0.0 {
            return Err(GraphError::InvalidWeights("weights sum to zero".into()));
        }
        Ok(WeightedMean {
            values: &self.sum / self.total_weight,
        })
    }
}

fn ensure_same_order(a: usize, b: usize) -> Result<(), GraphError> {
    if a != b {
        return Err(GraphError::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

pub(crate) fn permute_matrix(m: &DMatrix<f64>, p: &Permutation) -> DMatrix<f64> {
    let n = m.nrows();
    let inv = p.inverse();
    DMatrix::from_fn(n, n, |a, b| m[(inv.apply(a), inv.apply(b))])
}

/// Relabels `g` by `p`: the result is `P g Pᵀ`.
pub fn permute_graph(g: &Graph, p: &Permutation) -> Result<Graph, GraphError> {
    ensure_same_order(g.n(), p.len())?;
    Ok(Graph {
        weights: permute_matrix(&g.weights, p),
        kind: g.kind,
    })
}

pub fn frobenius_distance<A, B>(a: &A, b: &B) -> Result<f64, GraphError>
where
    A: MatrixLike + ?Sized,
    B: MatrixLike + ?Sized,
{
    let (a, b) = (a.matrix(), b.matrix());
    if a.shape() != b.shape() {
        return Err(GraphError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let ss: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(ss.sqrt())
}

/// `tr(b · P a Pᵀ)`.
pub fn trace_objective<A, B>(a: &A, b: &B, p: &Permutation) -> Result<f64, GraphError>
where
    A: MatrixLike + ?Sized,
    B: MatrixLike + ?Sized,
{
    let (a, b) = (a.matrix(), b.matrix());
    ensure_same_order(a.nrows(), b.nrows())?;
    ensure_same_order(a.nrows(), p.len())?;
    let n = a.nrows();
    let map = p.as_slice();
    let mut total = 0.0;
    for j in 0..n {
        let pj = map[j];
        for i in 0..n {
            let w = a[(i, j)];
            if w != 0.0 {
                total += w * b[(pj, map[i])];
            }
        }
    }
    Ok(total)
}

pub fn complement_graph(g: &Graph) -> Result<Graph, GraphError> {
    if !g.is_binary() {
        return Err(GraphError::RequiresBinary);
    }
    let n = g.n();
    Ok(Graph {
        weights: DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 - g.get(i, j) }),
        kind: GraphKind::Binary,
    })
}

/// Entry-wise average of `gs`, uniformly weighted unless `weights` is given.
pub fn mean_graph(gs: &[Graph], weights: Option<&[f64]>) -> Result<WeightedMean, GraphError> {
    let first = gs.first().ok_or(GraphError::EmptyList)?;
    if let Some(w) = weights {
        if w.len() != gs.len() {
            return Err(GraphError::InvalidWeights(format!(
                "{} weights for {} graphs",
                w.len(),
                gs.len()
            )));
        }
    }
    let mut acc = MeanAccumulator::new(first.n());
    for (idx, g) in gs.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[idx]);
        acc.add_weighted(g, w)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    w[(i, j)] = 1.0;
                    w[(j, i)] = 1.0;
                }
            }
        }
        Graph::binary(w).unwrap()
    }

    fn random_weighted(n: usize, rng: &mut ChaCha8Rng) -> Graph {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let x = rng.random::<f64>() * 3.0 - 1.0;
                w[(i, j)] = x;
                w[(j, i)] = x;
            }
        }
        Graph::weighted(w).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            Graph::binary(asym),
            Err(GraphError::Asymmetric { i: 0, j: 1 })
        );
        let loops = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(Graph::binary(loops), Err(GraphError::NonHollow { i: 0 }));
        let half = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!(matches!(
            Graph::binary(half.clone()),
            Err(GraphError::NotBinary { .. })
        ));
        assert!(Graph::weighted(half).is_ok());
        let rect = DMatrix::zeros(2, 3);
        assert!(matches!(
            Graph::weighted(rect),
            Err(GraphError::NotSquare { .. })
        ));
    }

    #[test]
    fn permute_by_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(9, 0.4, &mut rng);
        assert_eq!(permute_graph(&g, &Permutation::identity(9)).unwrap(), g);
    }

    #[test]
    fn permute_path_by_three_cycle() {
        // Worked by hand: P g Pᵀ with P[1][0] = P[2][1] = P[0][2] = 1 moves
        // the single edge 0-1 onto 1-2.
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let p = Permutation::new(vec![1, 2, 0]).unwrap();
        let expected = Graph::from_edges(3, &[(1, 2)]).unwrap();
        assert_eq!(permute_graph(&g, &p).unwrap(), expected);
        let explicit = p.to_matrix() * g.weights() * p.to_matrix().transpose();
        assert_eq!(&explicit, expected.weights());
    }

    #[test]
    fn permute_then_inverse_restores() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let g = random_graph(10, 0.5, &mut rng);
            let p = Permutation::random(10, &mut rng);
            let back = permute_graph(&permute_graph(&g, &p).unwrap(), &p.inverse()).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn permute_composes_contravariantly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = random_weighted(8, &mut rng);
            let p = Permutation::random(8, &mut rng);
            let q = Permutation::random(8, &mut rng);
            let twice = permute_graph(&permute_graph(&g, &p).unwrap(), &q).unwrap();
            assert_eq!(twice, permute_graph(&g, &q.compose(&p)).unwrap());
        }
    }

    #[test]
    fn permute_rejects_mismatch() {
        let g = Graph::empty(4);
        assert!(matches!(
            permute_graph(&g, &Permutation::identity(3)),
            Err(GraphError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frobenius_known_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(6, 0.5, &mut rng);
        assert_eq!(frobenius_distance(&g, &g).unwrap(), 0.0);
        let d = frobenius_distance(&Graph::empty(2), &Graph::complete(2)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        let err = frobenius_distance(&DMatrix::<f64>::zeros(2, 2), &DMatrix::<f64>::zeros(3, 3));
        assert!(matches!(err, Err(GraphError::ShapeMismatch { .. })));
    }

    #[test]
    fn frobenius_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(10, 10, |_, _| rng.random::<f64>());
        let b = DMatrix::from_fn(10, 10, |_, _| rng.random::<f64>());
        let mut ss = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                ss += (a[(i, j)] - b[(i, j)]).powi(2);
            }
        }
        assert!((frobenius_distance(&a, &b).unwrap() - ss.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn trace_of_self_match_counts_edges_twice() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(12, 0.3, &mut rng);
        let t = trace_objective(&g, &g, &Permutation::identity(12)).unwrap();
        assert_eq!(t, 2.0 * g.edge_count() as f64);
    }

    #[test]
    fn trace_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_weighted(7, &mut rng);
        let b = random_weighted(7, &mut rng);
        let p = Permutation::random(7, &mut rng);
        let pm = p.to_matrix();
        let direct = (b.weights() * &pm * a.weights() * pm.transpose()).trace();
        assert!((trace_objective(&a, &b, &p).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn frobenius_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [2usize, 5, 11, 20] {
            let a = random_weighted(n, &mut rng);
            let b = random_weighted(n, &mut rng);
            let p = Permutation::random(n, &mut rng);
            let pa = permute_graph(&a, &p).unwrap();
            let lhs = frobenius_distance(&b, &pa).unwrap().powi(2);
            let rhs = a.weights().norm_squared() + b.weights().norm_squared()
                - 2.0 * trace_objective(&a, &b, &p).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "n={n}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn trace_argmax_is_frobenius_argmin_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = random_graph(5, 0.5, &mut rng);
            let b = random_graph(5, 0.5, &mut rng);
            let mut map: Vec<usize> = (0..5).collect();
            let mut best_trace = (f64::NEG_INFINITY, Vec::new());
            let mut best_dist = (f64::INFINITY, Vec::new());
            loop {
                let p = Permutation::new(map.clone()).unwrap();
                let t = trace_objective(&a, &b, &p).unwrap();
                let d = frobenius_distance(&b, &permute_graph(&a, &p).unwrap())
                    .unwrap()
                    .powi(2);
                if t > best_trace.0 {
                    best_trace = (t, map.clone());
                }
                if d < best_dist.0 {
                    best_dist = (d, map.clone());
                }
                if !next_permutation(&mut map) {
                    break;
                }
            }
            // Both scans keep the first optimum in the same order.
            assert_eq!(best_trace.1, best_dist.1);
        }
    }

    #[test]
    fn self_trace_is_maximal_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_graph(8, 0.5, &mut rng);
        let at_id = trace_objective(&a, &a, &Permutation::identity(8)).unwrap();
        let mut map: Vec<usize> = (0..8).collect();
        while next_permutation(&mut map) {
            let p = Permutation::new(map.clone()).unwrap();
            assert!(trace_objective(&a, &a, &p).unwrap() <= at_id);
        }
    }

    #[test]
    fn complement_cases() {
        assert_eq!(complement_graph(&Graph::empty(4)).unwrap(), Graph::complete(4));
        assert_eq!(complement_graph(&Graph::complete(4)).unwrap(), Graph::empty(4));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = random_graph(10, 0.5, &mut rng);
            assert_eq!(complement_graph(&complement_graph(&g).unwrap()).unwrap(), g);
        }
        let w = random_weighted(4, &mut rng);
        assert_eq!(complement_graph(&w), Err(GraphError::RequiresBinary));
    }

    #[test]
    fn mean_graph_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_graph(6, 0.5, &mut rng);
        assert_eq!(mean_graph(std::slice::from_ref(&g), None).unwrap().values(), g.weights());

        let m = mean_graph(&[Graph::empty(3), Graph::complete(3)], None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert_eq!(m.get(i, j), want);
            }
        }

        let gs: Vec<Graph> = (0..10).map(|_| random_graph(7, 0.4, &mut rng)).collect();
        let ws: Vec<f64> = (0..10).map(|k| (k + 1) as f64).collect();
        let mean = mean_graph(&gs, Some(&ws)).unwrap();
        let total: f64 = ws.iter().sum();
        for i in 0..7 {
            for j in 0..7 {
                let mut s = 0.0;
                for (g, w) in gs.iter().zip(&ws) {
                    s += w * g.get(i, j);
                }
                assert!((mean.get(i, j) - s / total).abs() < 1e-12);
            }
        }

        assert_eq!(mean_graph(&[], None), Err(GraphError::EmptyList));
        assert!(matches!(
            mean_graph(&[Graph::empty(3), Graph::empty(4)], None),
            Err(GraphError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            mean_graph(&[Graph::empty(3)], Some(&[0.0])),
            Err(GraphError::InvalidWeights(_))
        ));
    }

    #[test]
    fn permutation_matrix_roundtrip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = Permutation::random(9, &mut rng);
        let m = p.to_matrix();
        assert_eq!(&m * m.transpose(), DMatrix::identity(9, 9));
        assert_eq!(Permutation::from_matrix(&m).unwrap(), p);
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert_eq!(p.compose(&p.inverse()), Permutation::identity(9));
    }

    #[test]
    fn asymmetry_certificate() {
        // Six vertices is the smallest order admitting an asymmetric graph.
        let asym =
            Graph::from_edges(6, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (3, 5)]).unwrap();
        assert!(asym.is_asymmetric().unwrap());
        // A path has a reflection automorphism.
        let path = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert!(!path.is_asymmetric().unwrap());
        assert!(Graph::empty(9).is_asymmetric().is_err());
    }
}
