//! Graph-level clustering: Frobenius distances, classical multidimensional
//! scaling, k-means, the adjusted Rand index, and a profile-likelihood
//! elbow for choosing the embedding dimension.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{frobenius_distance, Graph, GraphError};
use crate::models::sorted_eigen;
use crate::rng::RngSeed;

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusteringError {
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("invalid distance matrix: {0}")]
    InvalidDistances(String),
    #[error("requested {requested} but only {available} available")]
    TooMany { requested: usize, available: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Symmetric, nonnegative, zero-diagonal matrix of pairwise distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    values: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self, ClusteringError> {
        let (rows, cols) = values.shape();
        if rows != cols {
            return Err(ClusteringError::InvalidDistances(format!("shape {rows}x{cols}")));
        }
        for i in 0..rows {
            if values[(i, i)] != 0.0 {
                return Err(ClusteringError::InvalidDistances(format!(
                    "diagonal entry {i} is nonzero"
                )));
            }
            for j in 0..cols {
                let v = values[(i, j)];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ClusteringError::InvalidDistances(format!(
                        "entry ({i}, {j}) = {v}"
                    )));
                }
                if v != values[(j, i)] {
                    return Err(ClusteringError::InvalidDistances(format!(
                        "asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `−½ J (D∘D) J` with `J = I − 11ᵀ/m`.
    pub fn double_centered(&self) -> DMatrix<f64> {
        let m = self.len();
        let sq = self.values.map(|v| v * v);
        let row_means: Vec<f64> = (0..m).map(|i| sq.row(i).sum() / m as f64).collect();
        let grand = row_means.iter().sum::<f64>() / m as f64;
        DMatrix::from_fn(m, m, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand))
    }
}

/// Cluster labels in `0..k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    labels: Vec<usize>,
}

impl Labeling {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of distinct labels.
    pub fn num_clusters(&self) -> usize {
        let mut seen = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Relabels clusters in order of first appearance.
    pub fn canonical(&self) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Self { labels }
    }
}

pub fn pairwise_distances(gs: &[Graph]) -> Result<DistanceMatrix, ClusteringError> {
    let m = gs.len();
    if m < 2 {
        return Err(ClusteringError::TooFew { need: 2, got: m });
    }
    let n = gs[0].n();
    if let Some(g) = gs.iter().find(|g| g.n() != n) {
        return Err(GraphError::DimensionMismatch { left: n, right: g.n() }.into());
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..m)
                .map(|j| frobenius_distance(&gs[i], &gs[j]).expect("equal shapes"))
                .collect()
        })
        .collect();
    let mut d = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(DistanceMatrix { values: d })
}

/// Classical MDS into `dim` coordinates (rows are items). Negative
/// eigenvalues are clamped to zero.
pub fn cmds_embed(d: &DistanceMatrix, dim: usize) -> Result<DMatrix<f64>, ClusteringError> {
    let m = d.len();
    if dim > m {
        return Err(ClusteringError::TooMany {
            requested: dim,
            available: m,
        });
    }
    let (vals, vecs) = sorted_eigen(&d.double_centered(), |v| v);
    let mut x = DMatrix::zeros(m, dim);
    for c in 0..dim {
        let scale = vals[c].max(0.0).sqrt();
        x.set_column(c, &(vecs.column(c) * scale));
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub labeling: Labeling,
    pub centers: DMatrix<f64>,
    pub wcss: f64,
    /// Within-cluster sum of squares after each Lloyd step of the winning
    /// restart.
    pub history: Vec<f64>,
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    (0..x.ncols()).map(|t| (x[(i, t)] - c[(k, t)]).powi(2)).sum()
}

fn nearest(x: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centers.nrows() {
        let d = sq_dist(x, i, centers, k);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seed(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let (m, dim) = x.shape();
    let mut centers = DMatrix::zeros(k, dim);
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..m);
    chosen.push(first);
    centers.set_row(0, &x.row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            // Skip zero-weight tail picks from rounding.
            if d2[idx] == 0.0 {
                (0..m).rev().find(|&i| d2[i] > 0.0).unwrap_or(idx)
            } else {
                idx
            }
        } else {
            (0..m).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        centers.set_row(c, &x.row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(x, i, &centers, c));
        }
    }
    centers
}

fn lloyd(x: &DMatrix<f64>, mut centers: DMatrix<f64>) -> KMeansFit {
    let (m, dim) = x.shape();
    let k = centers.nrows();
    let mut labels = vec![usize::MAX; m];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut wcss = 0.0;
        for i in 0..m {
            let (c, d) = nearest(x, i, &centers);
            wcss += d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        history.push(wcss);
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..m {
            counts[labels[i]] += 1;
            for t in 0..dim {
                sums[(labels[i], t)] += x[(i, t)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for t in 0..dim {
                    centers[(c, t)] = sums[(c, t)] / counts[c] as f64;
                }
            }
        }
    }
    let wcss = *history.last().expect("at least one pass");
    KMeansFit {
        labeling: Labeling::new(labels),
        centers,
        wcss,
        history,
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` runs by
/// within-cluster sum of squares (earliest restart on ties). Labels are
/// renumbered by first appearance.
pub fn kmeans(
    x: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    rng: RngSeed,
) -> Result<KMeansFit, ClusteringError> {
    let m = x.nrows();
    if k == 0 || k > m {
        return Err(ClusteringError::TooMany {
            requested: k,
            available: m,
        });
    }
    if restarts == 0 {
        return Err(ClusteringError::InvalidArgument("restarts must be at least 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClusteringError::InvalidArgument("non-finite coordinates".into()));
    }
    let fits: Vec<KMeansFit> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut g = rng.child(r as u64).rng();
            lloyd(x, plus_plus_seed(x, k, &mut g))
        })
        .collect();
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.wcss < fits[best].wcss {
            best = i;
        }
    }
    let mut fit = fits.into_iter().nth(best).expect("nonempty");
    let canonical = fit.labeling.canonical();
    // Reorder centers to follow the canonical labels.
    let mut centers = DMatrix::zeros(k, x.ncols());
    let mut placed = vec![false; k];
    for (old, new) in fit.labeling.labels().iter().zip(canonical.labels()) {
        if !placed[*new] {
            centers.set_row(*new, &fit.centers.row(*old));
            placed[*new] = true;
        }
    }
    let mut next = canonical.num_clusters();
    for old in 0..k {
        if !fit.labeling.labels().contains(&old) {
            centers.set_row(next, &fit.centers.row(old));
            next += 1;
        }
    }
    fit.labeling = canonical;
    fit.centers = centers;
    Ok(fit)
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

pub fn adjusted_rand_index(a: &Labeling, b: &Labeling) -> Result<f64, ClusteringError> {
    if a.len() != b.len() {
        return Err(ClusteringError::LengthMismatch(a.len(), b.len()));
    }
    let (a, b) = (a.canonical(), b.canonical());
    let (ka, kb) = (a.num_clusters(), b.num_clusters());
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let row: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let col: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = row * col / total;
    let max = 0.5 * (row + col);
    if max == expected {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Profile-likelihood elbow of a decreasing sequence: the split size `q`
/// that minimizes the pooled within-group sum of squares of
/// `values[..q]` and `values[q..]` (smallest `q` on ties).
pub fn profile_likelihood_elbow(values: &[f64]) -> usize {
    let p = values.len();
    if p < 2 {
        return 1;
    }
    let ss = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
    };
    if ss(values) == 0.0 {
        return 1;
    }
    let mut best = (1, f64::INFINITY);
    for q in 1..p {
        let s = ss(&values[..q]) + ss(&values[q..]);
        if s < best.1 {
            best = (q, s);
        }
    }
    best.0
}

/// Elbow of the top `max_dim` eigenvalues (negatives clamped) of the
/// double-centered distance matrix.
pub fn elbow_dimension(d: &DistanceMatrix, max_dim: usize) -> Result<usize, ClusteringError> {
    let m = d.len();
    if max_dim == 0 || max_dim > m {
        return Err(ClusteringError::TooMany {
            requested: max_dim,
            available: m,
        });
    }
    let (vals, _) = sorted_eigen(&d.double_centered(), |v| v);
    let spectrum: Vec<f64> = vals.iter().take(max_dim).map(|v| v.max(0.0)).collect();
    Ok(profile_likelihood_elbow(&spectrum))
}
