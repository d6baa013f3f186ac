use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use super::config::*;
use super::{HarnessError, ResultRow};
use crate::clustering::{adjusted_rand_index, cmds_embed, elbow_dimension, kmeans, pairwise_distances, Labeling};
use crate::graph::{Graph, MeanAccumulator, Permutation, WeightedMean};
use crate::models::{bitflip, mase_embed, sample_er, sample_from_probabilities, NoiseSpec};
use crate::pipelines::{clustered_match_means, coarse_match_mean, fine_match_all, match_accuracy, ShuffledObservation};
use crate::rng::RngSeed;
use crate::theory::{exact_gap_variance, expected_trace_sbm, standardized_gap_samples};

type Result<T> = std::result::Result<T, HarnessError>;

/// Rows in canonical order plus run-level facts for the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub extras: BTreeMap<String, Value>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut extras = BTreeMap::new();
    extras.insert(
        "seed_rule".into(),
        json!(format!("first {} vertices of a uniform shuffle", cfg.seeds)),
    );
    let rows = match &cfg.params {
        ExperimentParams::SingleEr(c) => single_er(cfg, c)?,
        ExperimentParams::TwoEr(c) => two_er(cfg, c)?,
        ExperimentParams::CosieGrid(c) => cosie_grid(cfg, c, &mut extras)?,
        ExperimentParams::ConnectomeSurrogate(c) => connectome(cfg, c)?,
        ExperimentParams::ClusterPipeline(c) => cluster_pipeline(cfg, c)?,
        ExperimentParams::TheorySuite(c) => theory_suite(cfg, c)?,
    };
    Ok(RunOutput { rows, extras })
}

fn num(v: f64) -> String {
    format!("{v}")
}

struct RowMaker<'a> {
    experiment: &'a str,
    replicate: usize,
    elapsed_ms: u64,
}

impl RowMaker<'_> {
    fn row(
        &self,
        params: &[(&str, String)],
        objective: f64,
        accuracy: Option<f64>,
        winner_class: Option<usize>,
    ) -> ResultRow {
        ResultRow {
            experiment: self.experiment.to_string(),
            replicate: self.replicate,
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            objective,
            accuracy,
            winner_class,
            elapsed_ms: self.elapsed_ms,
        }
    }
}

fn elapsed(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

/// Mean of `count` independent flips of `b`, flip `i` drawn from `seed.child(i)`.
fn flip_mean(b: &Graph, q: f64, count: usize, seed: RngSeed) -> Result<MeanAccumulator> {
    let noise = NoiseSpec::uniform(q)?;
    let mut acc = MeanAccumulator::new(b.n());
    for i in 0..count {
        acc.add(&bitflip(b, &noise, seed.child(i as u64))?)?;
    }
    Ok(acc)
}

fn merged(parts: &[&MeanAccumulator]) -> Result<WeightedMean> {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc.merge(p)?;
    }
    Ok(acc.finish()?)
}

fn grid_units(points: usize, replicates: usize) -> Vec<(usize, usize)> {
    (0..points)
        .flat_map(|g| (0..replicates).map(move |r| (g, r)))
        .collect()
}

fn collect_rows(chunks: Vec<Vec<ResultRow>>) -> Vec<ResultRow> {
    chunks.into_iter().flatten().collect()
}

fn single_er(cfg: &ExperimentConfig, c: &SingleEr) -> Result<Vec<ResultRow>> {
    let base = RngSeed::new(cfg.rng_seed);
    let chunks = grid_units(c.q_grid.len(), cfg.replicates)
        .into_par_iter()
        .map(|(g, rep)| {
            let start = Instant::now();
            let q = c.q_grid[g];
            let s = base.child(g as u64).child(rep as u64);
            let b = sample_er(c.n, c.p, s.child(0))?;
            let mean = flip_mean(&b, q, c.m, s.child(1))?.finish()?;
            let a = bitflip(&b, &NoiseSpec::uniform(q)?, s.child(2))?;
            let obs = ShuffledObservation::new(&a, cfg.seeds, s.child(3))?;
            let report = coarse_match_mean(&obs.graph, &mean, &obs.seeds, &cfg.sgm.options(s.child(4)))?
                .scored(&obs.truth)?;
            let maker = RowMaker {
                experiment: "single-er",
                replicate: rep,
                elapsed_ms: elapsed(start),
            };
            Ok(vec![maker.row(
                &[
                    ("n", c.n.to_string()),
                    ("m", c.m.to_string()),
                    ("p", num(c.p)),
                    ("q", num(q)),
                    ("granularity", "coarse".into()),
                ],
                report.objective,
                report.accuracy,
                None,
            )])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_rows(chunks))
}

fn two_er(cfg: &ExperimentConfig, c: &TwoEr) -> Result<Vec<ResultRow>> {
    let base = RngSeed::new(cfg.rng_seed);
    let chunks = grid_units(c.q_grid.len(), cfg.replicates)
        .into_par_iter()
        .map(|(g, rep)| {
            let start = Instant::now();
            let q = c.q_grid[g];
            let s = base.child(g as u64).child(rep as u64);
            let backgrounds = [sample_er(c.n, c.p1, s.child(0))?, sample_er(c.n, c.p2, s.child(1))?];
            let acc = [
                flip_mean(&backgrounds[0], q, c.m1, s.child(2))?,
                flip_mean(&backgrounds[1], q, c.m2, s.child(3))?,
            ];
            let own = [acc[0].finish()?, acc[1].finish()?];
            let global = merged(&[&acc[0], &acc[1]])?;
            let mut out = Vec::with_capacity(6);
            let mut reports = Vec::with_capacity(6);
            for class in 0..2 {
                let a = bitflip(&backgrounds[class], &NoiseSpec::uniform(q)?, s.child(4 + class as u64))?;
                let obs = ShuffledObservation::new(&a, cfg.seeds, s.child(6 + class as u64))?;
                let opts = cfg.sgm.options(s.child(8 + class as u64));
                let targets: [(&str, &WeightedMean); 3] = [
                    ("coarse", &global),
                    ("clustered", &own[class]),
                    ("misclustered", &own[1 - class]),
                ];
                for (strategy, mean) in targets {
                    let r = coarse_match_mean(&obs.graph, mean, &obs.seeds, &opts)?.scored(&obs.truth)?;
                    reports.push((class, strategy, r));
                }
            }
            let maker = RowMaker {
                experiment: "two-er",
                replicate: rep,
                elapsed_ms: elapsed(start),
            };
            for (class, strategy, r) in reports {
                out.push(maker.row(
                    &[
                        ("n", c.n.to_string()),
                        ("m1", c.m1.to_string()),
                        ("m2", c.m2.to_string()),
                        ("q", num(q)),
                        ("a_class", (class + 1).to_string()),
                        ("strategy", strategy.into()),
                    ],
                    r.objective,
                    r.accuracy,
                    None,
                ));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_rows(chunks))
}

fn cosie_grid(cfg: &ExperimentConfig, c: &CosieGrid, extras: &mut BTreeMap<String, Value>) -> Result<Vec<ResultRow>> {
    let base = RngSeed::new(cfg.rng_seed);
    // Backgrounds are fixed by the seed and shared by every replicate, so
    // per-cell means describe one set of backgrounds.
    let setup = base.child(0);
    let ers = (0..c.k)
        .map(|i| sample_er(c.n, c.er_p, setup.child(i as u64)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let embedding = mase_embed(&ers, c.dim)?;
    let (probs, clipped) = embedding.clipped_probabilities();
    extras.insert("clipped_pairs".into(), json!(clipped));
    extras.insert("total_pairs".into(), json!(c.k * c.n * (c.n - 1) / 2));
    let backgrounds = probs
        .iter()
        .enumerate()
        .map(|(i, p)| sample_from_probabilities(p, setup.child(1000 + i as u64)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, usize)> = (1..c.k)
        .flat_map(|a| ((a + 1)..c.k).map(move |b| (a, b)))
        .collect();

    let mut rows = Vec::new();
    for rep in 0..cfg.replicates {
        let start = Instant::now();
        let r = base.child(1).child(rep as u64);
        let sums = (0..c.k)
            .into_par_iter()
            .map(|i| {
                let count = if i == 0 { c.l1 } else { c.li };
                flip_mean(&backgrounds[i], c.flip, count, r.child(i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let a = bitflip(&backgrounds[0], &NoiseSpec::uniform(c.flip)?, r.child(c.k as u64))?;
        let obs = ShuffledObservation::new(&a, cfg.seeds, r.child(c.k as u64 + 1))?;
        let setup_ms = elapsed(start);
        let chunk = cells
            .par_iter()
            .enumerate()
            .map(|(cell, &(ca, cb))| {
                let t = Instant::now();
                let mean = merged(&[&sums[0], &sums[ca], &sums[cb]])?;
                let opts = cfg.sgm.options(r.child(10_000 + cell as u64));
                let rep_match = coarse_match_mean(&obs.graph, &mean, &obs.seeds, &opts)?.scored(&obs.truth)?;
                let maker = RowMaker {
                    experiment: "cosie-grid",
                    replicate: rep,
                    elapsed_ms: setup_ms + elapsed(t),
                };
                Ok(maker.row(
                    &[("a", (ca + 1).to_string()), ("b", (cb + 1).to_string())],
                    rep_match.objective,
                    rep_match.accuracy,
                    None,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(chunk);
    }
    Ok(rows)
}

/// Symmetric strength matrix with entries uniform in `[lo, hi]`, drawn in
/// row-major upper-triangle order.
fn strengths(n: usize, range: [f64; 2], seed: RngSeed) -> DMatrix<f64> {
    let mut rng = seed.rng();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = range[0] + (range[1] - range[0]) * rng.random::<f64>();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

fn weighted_scan(scan: &Graph, strength: &DMatrix<f64>, jitter: f64, seed: RngSeed) -> Result<Graph> {
    let n = scan.n();
    let mut rng = seed.rng();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let u: f64 = rng.random();
            if scan.get(i, j) != 0.0 {
                let v = strength[(i, j)] * (1.0 + jitter * (2.0 * u - 1.0));
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    Ok(Graph::weighted(w)?)
}

struct SurrogateScans {
    /// `scans[class][t]` per mode.
    binary: Vec<Vec<Graph>>,
    weighted: Vec<Vec<Graph>>,
}

fn surrogate_scans(c: &ConnectomeSurrogate, s: RngSeed) -> Result<SurrogateScans> {
    let noise = NoiseSpec::uniform(c.q)?;
    let need_weighted = c.modes.contains(&WeightMode::Weighted);
    let per_class = (0..c.classes)
        .into_par_iter()
        .map(|class| {
            let cs = s.child(class as u64);
            let b = sample_er(c.n, c.p, cs.child(0))?;
            let strength = strengths(c.n, c.weight_range, cs.child(1));
            let mut bin = Vec::with_capacity(c.scans);
            let mut wtd = Vec::new();
            for t in 0..c.scans {
                let scan = bitflip(&b, &noise, cs.child(2).child(t as u64))?;
                if need_weighted {
                    wtd.push(weighted_scan(&scan, &strength, c.weight_jitter, cs.child(3).child(t as u64))?);
                }
                bin.push(scan);
            }
            Ok((bin, wtd))
        })
        .collect::<Result<Vec<_>>>()?;
    let (binary, weighted) = per_class.into_iter().unzip();
    Ok(SurrogateScans { binary, weighted })
}

fn connectome(cfg: &ExperimentConfig, c: &ConnectomeSurrogate) -> Result<Vec<ResultRow>> {
    let base = RngSeed::new(cfg.rng_seed);
    let mut rows = Vec::new();
    for rep in 0..cfg.replicates {
        let rs = base.child(rep as u64);
        let scans = surrogate_scans(c, rs.child(0))?;
        for &mode in &c.modes {
            let graphs = match mode {
                WeightMode::Binary => &scans.binary,
                WeightMode::Weighted => &scans.weighted,
            };
            let accs = graphs
                .iter()
                .map(|class| {
                    let mut acc = MeanAccumulator::new(c.n);
                    for g in &class[..c.in_sample] {
                        acc.add(g)?;
                    }
                    Ok(acc)
                })
                .collect::<Result<Vec<_>>>()?;
            let class_means = accs.iter().map(|a| a.finish()).collect::<std::result::Result<Vec<_>, _>>()?;
            let global = merged(&accs.iter().collect::<Vec<_>>())?;
            let in_sample: Vec<Graph> = graphs
                .iter()
                .flat_map(|class| class[..c.in_sample].iter().cloned())
                .collect();
            let outs: Vec<(usize, usize)> = (0..c.classes)
                .flat_map(|class| (c.in_sample..c.scans).map(move |t| (class, t)))
                .collect();
            let chunks = outs
                .into_par_iter()
                .map(|(class, t)| {
                    let start = Instant::now();
                    let tag = (class * c.scans + t) as u64;
                    // The same shuffle and seeds are used for every mode.
                    let obs = ShuffledObservation::new(&graphs[class][t], cfg.seeds, rs.child(1).child(tag))?;
                    let opts = cfg.sgm.options(rs.child(2).child(tag));
                    let coarse = coarse_match_mean(&obs.graph, &global, &obs.seeds, &opts)?.scored(&obs.truth)?;
                    let clustered = clustered_match_means(&obs.graph, &class_means, &obs.seeds, &opts)?;
                    let fine = if c.include_fine {
                        fine_match_all(&obs.graph, &in_sample, &obs.seeds, &opts)?
                    } else {
                        Vec::new()
                    };
                    let maker = RowMaker {
                        experiment: "connectome-surrogate",
                        replicate: rep,
                        elapsed_ms: elapsed(start),
                    };
                    let params = |granularity: &str, target: String| {
                        [
                            ("mode", mode.as_str().to_string()),
                            ("out_class", class.to_string()),
                            ("out_scan", t.to_string()),
                            ("granularity", granularity.to_string()),
                            ("target", target),
                        ]
                    };
                    let mut out = Vec::with_capacity(1 + c.classes + fine.len());
                    out.push(maker.row(&params("coarse", String::new()), coarse.objective, coarse.accuracy, None));
                    for (l, m) in clustered.per_class.iter().enumerate() {
                        out.push(maker.row(
                            &params("clustered", l.to_string()),
                            m.objective,
                            Some(match_accuracy(&m.perm, &obs.truth)?),
                            Some(clustered.winner),
                        ));
                    }
                    for (idx, m) in fine.iter().enumerate() {
                        out.push(maker.row(
                            &params("fine", idx.to_string()),
                            m.objective,
                            Some(match_accuracy(&m.perm, &obs.truth)?),
                            None,
                        ));
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            rows.extend(collect_rows(chunks));
        }
    }
    Ok(rows)
}

fn cluster_pipeline(cfg: &ExperimentConfig, c: &ClusterPipeline) -> Result<Vec<ResultRow>> {
    let base = RngSeed::new(cfg.rng_seed);
    let noise = NoiseSpec::uniform(c.q)?;
    let mut rows = Vec::new();
    for rep in 0..cfg.replicates {
        let start = Instant::now();
        let rs = base.child(rep as u64);
        let total = c.in_sample + c.out_of_sample;
        let scans = (0..c.classes)
            .into_par_iter()
            .map(|class| {
                let cs = rs.child(0).child(class as u64);
                let b = sample_er(c.n, c.p, cs.child(0))?;
                (0..total)
                    .map(|t| Ok(bitflip(&b, &noise, cs.child(1).child(t as u64))?))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let in_sample: Vec<Graph> = scans
            .iter()
            .flat_map(|s| s[..c.in_sample].iter().cloned())
            .collect();
        let truth = Labeling::new((0..c.classes).flat_map(|k| std::iter::repeat_n(k, c.in_sample)).collect());
        let d = pairwise_distances(&in_sample)?;
        let m = in_sample.len();
        let elbow = elbow_dimension(&d, m.min(2 * c.classes).max(1))?;
        let dim = c.dim.unwrap_or(elbow);
        let x = cmds_embed(&d, dim)?;
        let fit = kmeans(&x, c.classes, c.kmeans_restarts, rs.child(1))?;
        let ari = adjusted_rand_index(&fit.labeling, &truth)?;
        let params = |stage: &str, true_class: String| {
            [
                ("stage", stage.to_string()),
                ("true_class", true_class),
                ("dim", dim.to_string()),
                ("elbow_dim", elbow.to_string()),
            ]
        };
        let maker = RowMaker {
            experiment: "cluster-pipeline",
            replicate: rep,
            elapsed_ms: elapsed(start),
        };
        rows.push(maker.row(&params("clustering", String::new()), fit.wcss, Some(ari), None));
        if !c.classify || c.out_of_sample == 0 {
            continue;
        }

        // Estimated clusters stand in for the unknown classes; each is named
        // after the true class most of its members carry.
        let labels = fit.labeling.labels();
        let mut accs: Vec<MeanAccumulator> = (0..c.classes).map(|_| MeanAccumulator::new(c.n)).collect();
        let mut votes = vec![vec![0usize; c.classes]; c.classes];
        for (i, g) in in_sample.iter().enumerate() {
            accs[labels[i]].add(g)?;
            votes[labels[i]][truth.labels()[i]] += 1;
        }
        let means = accs
            .iter()
            .map(|a| a.finish())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| HarnessError::Numerical("k-means produced an empty cluster".into()))?;
        let named: Vec<usize> = votes
            .iter()
            .map(|v| {
                let mut best = 0;
                for (k, &count) in v.iter().enumerate() {
                    if count > v[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        let outs: Vec<(usize, usize)> = (0..c.classes)
            .flat_map(|k| (c.in_sample..total).map(move |t| (k, t)))
            .collect();
        let chunk = outs
            .into_par_iter()
            .map(|(class, t)| {
                let t0 = Instant::now();
                let tag = (class * total + t) as u64;
                let obs = ShuffledObservation::new(&scans[class][t], cfg.seeds, rs.child(2).child(tag))?;
                let cm = clustered_match_means(&obs.graph, &means, &obs.seeds, &cfg.sgm.options(rs.child(3).child(tag)))?;
                let maker = RowMaker {
                    experiment: "cluster-pipeline",
                    replicate: rep,
                    elapsed_ms: elapsed(t0),
                };
                Ok(maker.row(
                    &params("classify", class.to_string()),
                    cm.deltas[cm.winner],
                    Some(match_accuracy(&cm.perm, &obs.truth)?),
                    Some(named[cm.winner]),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(chunk);
    }
    Ok(rows)
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// the standard normal.
pub fn ks_distance_normal(samples: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn theory_suite(cfg: &ExperimentConfig, c: &TheorySuite) -> Result<Vec<ResultRow>> {
    let base = RngSeed::new(cfg.rng_seed);
    let start = Instant::now();
    let (a, eps, r) = (0.3, 0.5, 0.1);
    let lambdas = vec![
        vec![vec![a, r, r], vec![r, r, r], vec![r, r, r]],
        vec![vec![r, r, r], vec![r, a + eps, r], vec![r, r, r]],
        vec![vec![r, r, r], vec![r, r, r], vec![r, r, a + eps]],
    ];
    let flips = [0.4, 0.1, 0.1];
    let identity = Permutation::identity(3);
    let swap = Permutation::transposition(3, 0, 1);
    let cases: [(&str, [usize; 3], &Permutation); 4] = [
        ("sbm_trace_identity_unequal", [1, 2, 0], &identity),
        ("sbm_trace_swap_unequal", [1, 2, 0], &swap),
        ("sbm_trace_identity_equal", [1, 1, 1], &identity),
        ("sbm_trace_swap_equal", [1, 1, 1], &swap),
    ];
    let mut rows = Vec::new();
    let maker = RowMaker {
        experiment: "theory-suite",
        replicate: 0,
        elapsed_ms: 0,
    };
    let params = |quantity: &str, n: String| [("quantity", quantity.to_string()), ("n", n)];
    for (name, counts, sigma) in cases {
        let v = expected_trace_sbm(&lambdas, &[1.0; 3], &counts, &flips, 0.4, sigma, 0)?;
        rows.push(RowMaker {
            elapsed_ms: elapsed(start),
            ..maker
        }
        .row(&params(name, String::new()), v, None, None));
    }
    for rep in 0..cfg.replicates {
        let t0 = Instant::now();
        let rs = base.child(rep as u64);
        let b1 = sample_er(c.n, c.background_p, rs.child(0))?;
        let b2 = sample_er(c.n, c.background_p, rs.child(1))?;
        let mut verts: Vec<usize> = (0..c.n).collect();
        verts.shuffle(&mut rs.child(2).rng());
        let mut map: Vec<usize> = (0..c.n).collect();
        for i in 0..c.moved {
            map[verts[i]] = verts[(i + 1) % c.moved];
        }
        let sigma = Permutation::new(map)?;
        let moments = exact_gap_variance(&b1, &b2, c.m1, c.m2, c.p, &sigma)?;
        let z = standardized_gap_samples(&b1, &b2, c.m1, c.m2, c.p, &sigma, c.reps, rs.child(3))?;
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (z.len().max(2) - 1) as f64).sqrt();
        let m = RowMaker {
            experiment: "theory-suite",
            replicate: rep,
            elapsed_ms: elapsed(t0),
        };
        let n = c.n.to_string();
        rows.push(m.row(&params("gap_variance", n.clone()), moments.variance, None, None));
        rows.push(m.row(&params("ks_distance", n.clone()), ks_distance_normal(&z), None, None));
        rows.push(m.row(&params("standardized_sd", n), sd, None, None));
    }
    Ok(rows)
}
