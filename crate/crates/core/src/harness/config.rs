use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::rng::RngSeed;
use crate::sgm::{InitMode, SgmOptions};

/// Size preset. Recorded in the run manifest; only [`ExperimentConfig::preset`]
/// reads it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgmSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for SgmSettings {
    fn default() -> Self {
        let d = SgmOptions::default();
        Self {
            max_iters: d.max_iters,
            tol: d.tol,
            restarts: d.restarts,
        }
    }
}

impl SgmSettings {
    pub fn options(&self, rng: RngSeed) -> SgmOptions {
        SgmOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            restarts: self.restarts,
            init: InitMode::Barycenter,
            rng,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Seed vertices per match.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub sgm: SgmSettings,
    #[serde(default)]
    pub scale: Scale,
    #[serde(flatten)]
    pub params: ExperimentParams,
}

fn default_replicates() -> usize {
    10
}

fn default_seeds() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentParams {
    SingleEr(SingleEr),
    TwoEr(TwoEr),
    CosieGrid(CosieGrid),
    ConnectomeSurrogate(ConnectomeSurrogate),
    ClusterPipeline(ClusterPipeline),
    TheorySuite(TheorySuite),
}

impl ExperimentParams {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SingleEr(_) => "single-er",
            Self::TwoEr(_) => "two-er",
            Self::CosieGrid(_) => "cosie-grid",
            Self::ConnectomeSurrogate(_) => "connectome-surrogate",
            Self::ClusterPipeline(_) => "cluster-pipeline",
            Self::TheorySuite(_) => "theory-suite",
        }
    }
}

pub const EXPERIMENT_NAMES: [&str; 6] = [
    "single-er",
    "two-er",
    "cosie-grid",
    "connectome-surrogate",
    "cluster-pipeline",
    "theory-suite",
];

fn q_steps(step: f64, max: f64) -> Vec<f64> {
    let k = (max / step).round() as usize;
    (0..=k).map(|i| (i as f64 * step * 1e9).round() / 1e9).collect()
}

/// One background `ER(n, p)`, `m` flips at rate `q`, observed graph flipped
/// at the same rate; coarse matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SingleEr {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub q_grid: Vec<f64>,
}

impl Default for SingleEr {
    fn default() -> Self {
        Self {
            n: 50,
            m: 10,
            p: 1.0 / 3.0,
            q_grid: q_steps(0.025, 0.5),
        }
    }
}

/// Two backgrounds; each observed graph is matched to the global mean, its
/// own class mean and the other class mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoEr {
    pub n: usize,
    pub p1: f64,
    pub p2: f64,
    pub m1: usize,
    pub m2: usize,
    pub q_grid: Vec<f64>,
}

impl Default for TwoEr {
    fn default() -> Self {
        Self {
            n: 80,
            p1: 0.2,
            p2: 0.4,
            m1: 200,
            m2: 2000,
            q_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

/// Backgrounds from a joint embedding of `k` ER graphs; class 1 is the
/// observed graph's class and every pair `a < b` of the others is mixed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosieGrid {
    pub n: usize,
    pub k: usize,
    pub dim: usize,
    pub er_p: f64,
    pub flip: f64,
    pub l1: usize,
    pub li: usize,
}

impl Default for CosieGrid {
    fn default() -> Self {
        Self {
            n: 100,
            k: 10,
            dim: 10,
            er_p: 0.5,
            flip: 0.1,
            l1: 10,
            li: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Binary,
    Weighted,
}

impl WeightMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Binary => "binary",
            Self::Weighted => "weighted",
        }
    }
}

/// Stand-in for a test/retest connectome collection: one ER background
/// per subject, `scans` flips each; the last `scans − in_sample` scans of
/// every subject are held out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectomeSurrogate {
    pub n: usize,
    pub classes: usize,
    pub p: f64,
    pub q: f64,
    pub scans: usize,
    pub in_sample: usize,
    pub modes: Vec<WeightMode>,
    /// Edge strengths are drawn uniformly from this range per subject.
    pub weight_range: [f64; 2],
    /// Multiplicative per-scan jitter `1 ± weight_jitter`.
    pub weight_jitter: f64,
    pub include_fine: bool,
}

impl Default for ConnectomeSurrogate {
    fn default() -> Self {
        Self {
            n: 70,
            classes: 15,
            p: 0.3,
            q: 0.05,
            scans: 10,
            in_sample: 9,
            modes: vec![WeightMode::Binary, WeightMode::Weighted],
            weight_range: [1.0, 10.0],
            weight_jitter: 0.2,
            include_fine: true,
        }
    }
}

/// Distances, classical MDS and k-means on the in-sample surrogate scans,
/// then classification of the held-out scans against the estimated
/// clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterPipeline {
    pub n: usize,
    pub classes: usize,
    pub p: f64,
    pub q: f64,
    pub in_sample: usize,
    pub out_of_sample: usize,
    /// Embedding dimension; the elbow of the spectrum when absent.
    pub dim: Option<usize>,
    pub kmeans_restarts: usize,
    pub classify: bool,
}

impl Default for ClusterPipeline {
    fn default() -> Self {
        Self {
            n: 70,
            classes: 15,
            p: 0.3,
            q: 0.05,
            in_sample: 9,
            out_of_sample: 1,
            dim: Some(14),
            kmeans_restarts: 25,
            classify: true,
        }
    }
}

/// Block-model constants plus normality of the standardized gap on two
/// independent ER backgrounds with `moved` labels cycled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheorySuite {
    pub n: usize,
    pub background_p: f64,
    pub m1: usize,
    pub m2: usize,
    pub p: f64,
    pub moved: usize,
    pub reps: usize,
}

impl Default for TheorySuite {
    fn default() -> Self {
        Self {
            n: 300,
            background_p: 0.5,
            m1: 10,
            m2: 10,
            p: 0.2,
            moved: 10,
            reps: 10_000,
        }
    }
}

fn prob(name: &str, v: f64) -> Result<(), HarnessError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(HarnessError::Config(format!("{name} = {v} is not a probability")));
    }
    Ok(())
}

fn positive(name: &str, v: usize) -> Result<(), HarnessError> {
    if v == 0 {
        return Err(HarnessError::Config(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn seeds_fit(seeds: usize, n: usize) -> Result<(), HarnessError> {
    if seeds > n {
        return Err(HarnessError::Config(format!("{seeds} seeds exceed n = {n}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn new(params: ExperimentParams) -> Self {
        Self {
            rng_seed: 0,
            replicates: default_replicates(),
            seeds: default_seeds(),
            sgm: SgmSettings::default(),
            scale: Scale::Desk,
            params,
        }
    }

    /// Defaults for `name`. Desk scale uses 10 replicates where full scale
    /// uses 50, and a single replicate for the heavy grid and surrogate
    /// runs. The ER sweeps use 20 SGM restarts.
    pub fn preset(name: &str, scale: Scale) -> Result<Self, HarnessError> {
        let params = match name {
            "single-er" => ExperimentParams::SingleEr(SingleEr::default()),
            "two-er" => ExperimentParams::TwoEr(TwoEr::default()),
            "cosie-grid" => ExperimentParams::CosieGrid(CosieGrid::default()),
            "connectome-surrogate" => ExperimentParams::ConnectomeSurrogate(ConnectomeSurrogate::default()),
            "cluster-pipeline" => ExperimentParams::ClusterPipeline(ClusterPipeline::default()),
            "theory-suite" => ExperimentParams::TheorySuite(TheorySuite::default()),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown experiment {other:?}; expected one of {}",
                    EXPERIMENT_NAMES.join(", ")
                )))
            }
        };
        let mut cfg = Self::new(params);
        cfg.scale = scale;
        cfg.replicates = match (name, scale) {
            ("two-er", Scale::Full) => 50,
            ("cosie-grid" | "connectome-surrogate" | "cluster-pipeline" | "theory-suite", _) => 1,
            _ => 10,
        };
        if matches!(name, "single-er" | "two-er") {
            // One barycenter start stalls in local optima near the recovery threshold.
            cfg.sgm.restarts = 20;
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn name(&self) -> &'static str {
        self.params.name()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        positive("replicates", self.replicates)?;
        positive("sgm.max_iters", self.sgm.max_iters)?;
        positive("sgm.restarts", self.sgm.restarts)?;
        if !(self.sgm.tol >= 0.0 && self.sgm.tol.is_finite()) {
            return Err(HarnessError::Config("sgm.tol must be nonnegative".into()));
        }
        match &self.params {
            ExperimentParams::SingleEr(c) => {
                positive("n", c.n)?;
                positive("m", c.m)?;
                prob("p", c.p)?;
                positive("q_grid length", c.q_grid.len())?;
                for &q in &c.q_grid {
                    prob("q", q)?;
                }
                seeds_fit(self.seeds, c.n)?;
            }
            ExperimentParams::TwoEr(c) => {
                positive("n", c.n)?;
                positive("m1", c.m1)?;
                positive("m2", c.m2)?;
                prob("p1", c.p1)?;
                prob("p2", c.p2)?;
                positive("q_grid length", c.q_grid.len())?;
                for &q in &c.q_grid {
                    prob("q", q)?;
                }
                seeds_fit(self.seeds, c.n)?;
            }
            ExperimentParams::CosieGrid(c) => {
                positive("n", c.n)?;
                positive("dim", c.dim)?;
                positive("l1", c.l1)?;
                positive("li", c.li)?;
                if c.k < 3 {
                    return Err(HarnessError::Config("k must be at least 3".into()));
                }
                if c.dim > c.n {
                    return Err(HarnessError::Config("dim exceeds n".into()));
                }
                prob("er_p", c.er_p)?;
                prob("flip", c.flip)?;
                seeds_fit(self.seeds, c.n)?;
            }
            ExperimentParams::ConnectomeSurrogate(c) => {
                positive("n", c.n)?;
                positive("classes", c.classes)?;
                positive("in_sample", c.in_sample)?;
                positive("modes length", c.modes.len())?;
                if c.scans <= c.in_sample {
                    return Err(HarnessError::Config("scans must exceed in_sample".into()));
                }
                prob("p", c.p)?;
                prob("q", c.q)?;
                let [lo, hi] = c.weight_range;
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return Err(HarnessError::Config("weight_range must satisfy 0 < lo <= hi".into()));
                }
                if !(0.0..1.0).contains(&c.weight_jitter) {
                    return Err(HarnessError::Config("weight_jitter must lie in [0, 1)".into()));
                }
                seeds_fit(self.seeds, c.n)?;
            }
            ExperimentParams::ClusterPipeline(c) => {
                positive("n", c.n)?;
                positive("classes", c.classes)?;
                positive("in_sample", c.in_sample)?;
                positive("kmeans_restarts", c.kmeans_restarts)?;
                prob("p", c.p)?;
                prob("q", c.q)?;
                let m = c.classes * c.in_sample;
                if m < 2 || c.classes > m {
                    return Err(HarnessError::Config("need at least two in-sample graphs and no more classes than graphs".into()));
                }
                if let Some(d) = c.dim {
                    positive("dim", d)?;
                    if d > m {
                        return Err(HarnessError::Config(format!("dim {d} exceeds {m} graphs")));
                    }
                }
                seeds_fit(self.seeds, c.n)?;
            }
            ExperimentParams::TheorySuite(c) => {
                positive("reps", c.reps)?;
                prob("background_p", c.background_p)?;
                if !(c.p > 0.0 && c.p < 1.0) {
                    return Err(HarnessError::Config("p must lie strictly between 0 and 1".into()));
                }
                if c.moved < 2 || c.moved > c.n {
                    return Err(HarnessError::Config("moved must lie in [2, n]".into()));
                }
            }
        }
        Ok(())
    }
}
