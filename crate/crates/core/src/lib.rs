//! Probabilistic spatial re-aggregation.
//!
//! Counts observed on one set of regions (the source geometry) are
//! predicted on another (the destination geometry) through a shared fine
//! base geometry. Two methods are provided: a population-weighted
//! correspondence baseline, and a probabilistic method that learns a
//! covariate model from the source counts, conditions the latent base
//! counts on the observed aggregates and summarises the destination
//! marginals with expectations and quantiles.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod aggregation;
pub mod conditioning;
pub mod correspondence;
pub mod error;
pub mod geometry;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod validation;

pub use aggregation::{build_aggregation_matrix, AggregationMatrix, CountVector, NullSpaceBasis, NullSpaceFrame};
pub use conditioning::{
    condition, AggregatedPosterior, ConditionedPosterior, ConditioningDiagnostics, McmcConfig, Strategy,
};
pub use correspondence::{build_correspondence, weighted_feature, CorrespondenceMatrix, WeightedFeature};
pub use error::{ReaggError, Result};
pub use geometry::{HierarchyTree, PointRecord, Polygon};
pub use io::{InputRef, JobSpec, ModelDocument};
pub use model::{CovariateTable, LatentDistribution, LikelihoodKind, Link, LinearModel};
pub use pipeline::{
    reaggregate, reaggregate_probabilistic, reaggregate_weighted, Learning, Method, PredictiveSummary, QuantilePair,
    ReaggregationJob, SummaryRow,
};
