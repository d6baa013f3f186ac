//! Clustered graph matching.
//!
//! Recovers the vertex labels of a shuffled out-of-sample graph by matching it
//! against a collection of vertex-aligned in-sample graphs at three levels of
//! granularity:
//!
//! * coarse: against the mean of every in-sample graph,
//! * clustered: against each class mean, which also classifies the graph,
//! * fine: against every in-sample graph individually.
//!
//! Matching is done with a seeded Frank-Wolfe relaxation of the quadratic
//! assignment problem ([`sgm`]), whose inner step is an exact linear
//! assignment solver ([`assignment`]). The [`theory`] module holds exact
//! finite-n calculators for the moments of the matching objective, and
//! [`harness`] runs the reference simulations end to end.

// Dense matrix code reads better with explicit index loops.
#![allow(clippy::needless_range_loop)]

pub mod assignment;
pub mod clustering;
pub mod graph;
pub mod harness;
pub mod io;
pub mod models;
mod numeric;
pub mod pipelines;
pub mod rng;
pub mod sgm;
pub mod theory;

pub use assignment::{brute_force_lap, solve_lap, Assignment, CostMatrix, LapError, Sense};
pub use graph::{
    complement_graph, frobenius_distance, mean_graph, permute_graph, trace_objective, Graph,
    GraphError, GraphKind, MatrixLike, MeanAccumulator, Permutation, WeightedMean,
};
pub use pipelines::{
    clustered_match, coarse_match, fine_match, match_accuracy, ClassifiedMatch, Granularity,
    GranularityReport, ShuffledObservation,
};
pub use rng::RngSeed;
pub use sgm::{brute_force_qap, sgm_match, InitMode, MatchResult, SeedSet, SgmError, SgmOptions};
