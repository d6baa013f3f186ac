//! Experiment runner: JSON-configured parameter grids, deterministic result
//! tables, run manifests and plot-ready aggregates.
//!
//! Every work unit (grid point × replicate) draws from its own RNG stream,
//! so results do not depend on the worker count. Rows are assembled in
//! canonical order by a single writer.

mod config;
mod experiments;
mod output;
mod plot;

use thiserror::Error;

pub use config::{
    ClusterPipeline, ConnectomeSurrogate, CosieGrid, ExperimentConfig, ExperimentParams, Scale,
    SgmSettings, SingleEr, TheorySuite, TwoEr, WeightMode, EXPERIMENT_NAMES,
};
pub use experiments::{ks_distance_normal, run_experiment, RunOutput};
pub use output::{
    read_results, validate_rows, write_results_csv, write_run, write_timings_csv, Manifest, RunFiles,
};
pub use plot::{emit_plot_data, PlotSpec, PlotTable};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("graph file: {0}")]
    GraphFile(#[from] crate::io::IoError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("results: {0}")]
    Results(String),
}

impl HarnessError {
    /// 2 config, 3 I/O, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) | Self::GraphFile(_) | Self::Results(_) => 3,
            Self::Numerical(_) => 4,
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {
        $(impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Numerical(e.to_string())
            }
        })*
    };
}

numerical_from!(
    crate::graph::GraphError,
    crate::models::ModelError,
    crate::sgm::SgmError,
    crate::pipelines::PipelineError,
    crate::clustering::ClusteringError,
    crate::theory::TheoryError
);

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => HarnessError::Io(io),
            other => HarnessError::Results(format!("{other:?}")),
        }
    }
}

/// One table row. `params` holds the experiment's parameter columns in a
/// fixed order. `accuracy` is absent for rows that are not matchings.
/// `elapsed_ms` is wall time and goes to the timings file only.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub replicate: usize,
    pub params: Vec<(String, String)>,
    pub objective: f64,
    pub accuracy: Option<f64>,
    pub winner_class: Option<usize>,
    pub elapsed_ms: u64,
}

impl ResultRow {
    pub fn param(&self, name: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}
