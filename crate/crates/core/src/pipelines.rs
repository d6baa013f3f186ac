//! Matching a shuffled graph against a vertex-aligned collection at three
//! granularities: the global mean (coarse), each class mean (clustered, which
//! also classifies the graph), and every individual graph (fine).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{mean_graph, permute_graph, Graph, GraphError, MatrixLike, Permutation, WeightedMean};
use crate::rng::RngSeed;
use crate::sgm::{sgm_match, MatchResult, SeedSet, SgmError, SgmOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("permutation sizes differ: {found} vs {truth}")]
    SizeMismatch { found: usize, truth: usize },
    #[error(transparent)]
    Sgm(#[from] SgmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Coarse,
    Clustered,
    Fine,
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Coarse => "coarse",
            Self::Clustered => "clustered",
            Self::Fine => "fine",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GranularityReport {
    pub mode: Granularity,
    pub perm: Permutation,
    pub objective: f64,
    pub accuracy: Option<f64>,
    /// Class index (clustered) or graph index (fine) of the matched
    /// reference; 0 for coarse.
    pub source: usize,
}

impl GranularityReport {
    /// Fills `accuracy` against the known alignment.
    pub fn scored(mut self, truth: &Permutation) -> Result<Self, PipelineError> {
        self.accuracy = Some(match_accuracy(&self.perm, truth)?);
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifiedMatch {
    /// `Δ_ℓ = ‖C_ℓ − P R Pᵀ‖_F` for each class.
    pub deltas: Vec<f64>,
    /// Lowest-index argmin of `deltas`.
    pub winner: usize,
    pub perm: Permutation,
    pub per_class: Vec<MatchResult>,
}

impl ClassifiedMatch {
    pub fn report(&self) -> GranularityReport {
        GranularityReport {
            mode: Granularity::Clustered,
            perm: self.perm.clone(),
            objective: self.deltas[self.winner],
            accuracy: None,
            source: self.winner,
        }
    }
}

/// A graph relabeled by a hidden uniform shuffle, with the alignment back to
/// the original labels and seeds drawn from it.
#[derive(Clone, Debug, PartialEq)]
pub struct ShuffledObservation {
    pub graph: Graph,
    /// Maps each vertex of `graph` to its original label.
    pub truth: Permutation,
    pub seeds: SeedSet,
}

impl ShuffledObservation {
    /// Shuffles `original` uniformly; the first `s` shuffled vertices are seeds.
    pub fn new(original: &Graph, s: usize, rng: RngSeed) -> Result<Self, PipelineError> {
        let shuffle = Permutation::random(original.n(), &mut rng.rng());
        let graph = permute_graph(original, &shuffle)?;
        let truth = shuffle.inverse();
        let seeds = SeedSet::from_truth(&truth, s);
        Ok(Self { graph, truth, seeds })
    }
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Matches against an already averaged reference.
pub fn coarse_match_mean<M: MatrixLike + Sync + ?Sized>(
    r: &Graph,
    mean: &M,
    seeds: &SeedSet,
    opts: &SgmOptions,
) -> Result<GranularityReport, PipelineError> {
    let m = sgm_match(r, mean, seeds, opts)?;
    Ok(GranularityReport {
        mode: Granularity::Coarse,
        perm: m.perm,
        objective: m.objective,
        accuracy: None,
        source: 0,
    })
}

pub fn coarse_match(
    r: &Graph,
    in_sample: &[Graph],
    seeds: &SeedSet,
    opts: &SgmOptions,
) -> Result<GranularityReport, PipelineError> {
    if in_sample.is_empty() {
        return Err(PipelineError::Empty("in-sample collection"));
    }
    let mean = mean_graph(in_sample, None)?;
    coarse_match_mean(r, &mean, seeds, opts)
}

/// Matches against each class mean and classifies by the smallest
/// objective. Every class uses the same solver options.
pub fn clustered_match_means<M: MatrixLike + Sync>(
    r: &Graph,
    means: &[M],
    seeds: &SeedSet,
    opts: &SgmOptions,
) -> Result<ClassifiedMatch, PipelineError> {
    if means.is_empty() {
        return Err(PipelineError::Empty("class list"));
    }
    let per_class = means
        .par_iter()
        .map(|c| sgm_match(r, c, seeds, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let deltas: Vec<f64> = per_class.iter().map(|m| m.objective).collect();
    let winner = argmin_first(&deltas);
    Ok(ClassifiedMatch {
        perm: per_class[winner].perm.clone(),
        deltas,
        winner,
        per_class,
    })
}

pub fn clustered_match(
    r: &Graph,
    classes: &[Vec<Graph>],
    seeds: &SeedSet,
    opts: &SgmOptions,
) -> Result<ClassifiedMatch, PipelineError> {
    if classes.is_empty() {
        return Err(PipelineError::Empty("class list"));
    }
    let means = classes
        .iter()
        .map(|c| {
            if c.is_empty() {
                Err(PipelineError::Empty("class"))
            } else {
                Ok(mean_graph(c, None)?)
            }
        })
        .collect::<Result<Vec<WeightedMean>, _>>()?;
    clustered_match_means(r, &means, seeds, opts)
}

/// Matches against every graph and keeps the best (lowest index on ties).
pub fn fine_match(
    r: &Graph,
    in_sample: &[Graph],
    seeds: &SeedSet,
    opts: &SgmOptions,
) -> Result<GranularityReport, PipelineError> {
    let all = fine_match_all(r, in_sample, seeds, opts)?;
    let objectives: Vec<f64> = all.iter().map(|m| m.objective).collect();
    let source = argmin_first(&objectives);
    Ok(GranularityReport {
        mode: Granularity::Fine,
        perm: all[source].perm.clone(),
        objective: objectives[source],
        accuracy: None,
        source,
    })
}

/// Every individual match, in input order.
pub fn fine_match_all(
    r: &Graph,
    in_sample: &[Graph],
    seeds: &SeedSet,
    opts: &SgmOptions,
) -> Result<Vec<MatchResult>, PipelineError> {
    if in_sample.is_empty() {
        return Err(PipelineError::Empty("in-sample collection"));
    }
    Ok(in_sample
        .par_iter()
        .map(|g| sgm_match(r, g, seeds, opts))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Fraction of vertices mapped to their true label.
pub fn match_accuracy(found: &Permutation, truth: &Permutation) -> Result<f64, PipelineError> {
    if found.len() != truth.len() {
        return Err(PipelineError::SizeMismatch {
            found: found.len(),
            truth: truth.len(),
        });
    }
    if found.is_empty() {
        return Err(PipelineError::Empty("permutation"));
    }
    let hits = (0..found.len())
        .filter(|&v| found.apply(v) == truth.apply(v))
        .count();
    Ok(hits as f64 / found.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bitflip, sample_er, NoiseSpec};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noisy_copies(base: &Graph, q: f64, m: usize, rng: RngSeed) -> Vec<Graph> {
        let noise = NoiseSpec::uniform(q).unwrap();
        (0..m)
            .map(|k| bitflip(base, &noise, rng.child(k as u64)).unwrap())
            .collect()
    }

    #[test]
    fn coarse_self_match() {
        let g = Graph::from_edges(6, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 4), (3, 5)]).unwrap();
        let rep = coarse_match(&g, std::slice::from_ref(&g), &SeedSet::leading(2), &SgmOptions::default())
            .unwrap();
        assert!(rep.perm.is_identity());
        assert_eq!(rep.objective, 0.0);
        assert!(coarse_match(&g, &[], &SeedSet::none(), &SgmOptions::default()).is_err());
    }

    #[test]
    fn identical_classes_tie_to_first() {
        let g = sample_er(15, 0.5, RngSeed::new(1)).unwrap();
        let classes = vec![vec![g.clone()], vec![g.clone()]];
        let obs = ShuffledObservation::new(&g, 3, RngSeed::new(2)).unwrap();
        let cm = clustered_match(&obs.graph, &classes, &obs.seeds, &SgmOptions::default()).unwrap();
        assert_eq!(cm.winner, 0);
        assert_eq!(cm.deltas[0], cm.deltas[1]);
    }

    #[test]
    fn single_class_equals_coarse() {
        let base = sample_er(30, 0.3, RngSeed::new(3)).unwrap();
        let graphs = noisy_copies(&base, 0.1, 4, RngSeed::new(4));
        let a = bitflip(&base, &NoiseSpec::uniform(0.1).unwrap(), RngSeed::new(5)).unwrap();
        let obs = ShuffledObservation::new(&a, 5, RngSeed::new(6)).unwrap();
        let opts = SgmOptions::default();
        let coarse = coarse_match(&obs.graph, &graphs, &obs.seeds, &opts).unwrap();
        let cm = clustered_match(&obs.graph, &[graphs], &obs.seeds, &opts).unwrap();
        assert_eq!(cm.perm, coarse.perm);
        assert_eq!(cm.deltas[0], coarse.objective);
    }

    #[test]
    fn class_order_permutes_deltas() {
        let bases: Vec<Graph> = (0..3).map(|k| sample_er(30, 0.3, RngSeed::new(10 + k)).unwrap()).collect();
        let classes: Vec<Vec<Graph>> = bases
            .iter()
            .enumerate()
            .map(|(k, b)| noisy_copies(b, 0.1, 3, RngSeed::new(20 + k as u64)))
            .collect();
        let a = bitflip(&bases[1], &NoiseSpec::uniform(0.1).unwrap(), RngSeed::new(30)).unwrap();
        let obs = ShuffledObservation::new(&a, 5, RngSeed::new(31)).unwrap();
        let opts = SgmOptions::default();
        let cm = clustered_match(&obs.graph, &classes, &obs.seeds, &opts).unwrap();
        assert_eq!(cm.winner, 1);
        assert_eq!(match_accuracy(&cm.perm, &obs.truth).unwrap(), 1.0);
        let order = [2usize, 0, 1];
        let reordered: Vec<Vec<Graph>> = order.iter().map(|&k| classes[k].clone()).collect();
        let cm2 = clustered_match(&obs.graph, &reordered, &obs.seeds, &opts).unwrap();
        for (pos, &k) in order.iter().enumerate() {
            assert_eq!(cm2.deltas[pos], cm.deltas[k]);
        }
        assert_eq!(order[cm2.winner], cm.winner);
        assert!(cm.deltas.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn fine_match_finds_itself() {
        let graphs: Vec<Graph> = (0..4).map(|k| sample_er(20, 0.4, RngSeed::new(40 + k)).unwrap()).collect();
        let rep = fine_match(&graphs[2], &graphs, &SeedSet::leading(5), &SgmOptions::default()).unwrap();
        assert_eq!(rep.source, 2);
        assert_eq!(rep.objective, 0.0);
    }

    #[test]
    fn fine_match_single_background() {
        let base = sample_er(50, 1.0 / 3.0, RngSeed::new(50)).unwrap();
        let graphs = noisy_copies(&base, 0.1, 5, RngSeed::new(51));
        let a = bitflip(&base, &NoiseSpec::uniform(0.1).unwrap(), RngSeed::new(52)).unwrap();
        let obs = ShuffledObservation::new(&a, 5, RngSeed::new(53)).unwrap();
        let rep = fine_match(&obs.graph, &graphs, &obs.seeds, &SgmOptions::default())
            .unwrap()
            .scored(&obs.truth)
            .unwrap();
        assert_eq!(rep.accuracy, Some(1.0));
    }

    #[test]
    fn accuracy_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let truth = Permutation::random(10, &mut rng);
        assert_eq!(match_accuracy(&truth, &truth).unwrap(), 1.0);
        let swapped = truth.compose(&Permutation::transposition(10, 2, 7));
        assert_eq!(match_accuracy(&swapped, &truth).unwrap(), 0.8);
        assert!(match_accuracy(&truth, &Permutation::identity(9)).is_err());
    }

    #[test]
    fn random_guess_accuracy_with_seeds() {
        // Expected fixed points of a uniform permutation is one, so the
        // chance level is (s + 1) / n.
        let (n, s, reps) = (50usize, 5usize, 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let truth = Permutation::random(n, &mut rng);
        let mut total = 0.0;
        for _ in 0..reps {
            let mut free: Vec<usize> = (s..n).map(|v| truth.apply(v)).collect();
            free.shuffle(&mut rng);
            let mut map: Vec<usize> = (0..s).map(|v| truth.apply(v)).collect();
            map.extend(free);
            total += match_accuracy(&Permutation::new(map).unwrap(), &truth).unwrap();
        }
        let mean = total / reps as f64;
        assert!((mean - 0.12).abs() < 0.005, "{mean}");
    }

    #[test]
    fn shuffled_observation_alignment() {
        let g = sample_er(25, 0.3, RngSeed::new(70)).unwrap();
        let obs = ShuffledObservation::new(&g, 4, RngSeed::new(71)).unwrap();
        assert_eq!(permute_graph(&obs.graph, &obs.truth).unwrap(), g);
        for &(i, j) in obs.seeds.pairs() {
            assert_eq!(obs.truth.apply(i), j);
        }
    }
}
