//! Geo-unit factor analysis: ingest per-unit feature tables and daily case
//! counts, derive an increase-rate target, select features with Lasso and
//! RReliefF, cluster units with k-means, and summarise each feature category
//! as a one-dimensional t-SNE "factor level".
//!
//! The stages are exposed as plain functions over immutable inputs; the
//! [`pipeline`] module wires them together behind a JSON config and the
//! `geofactor` binary.

pub mod cluster;
pub mod diag;
pub mod embed;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod select;
pub mod stats;
pub mod synth;
pub mod target;

pub use cluster::{ClusterModel, KMeansFit};
pub use diag::Warning;
pub use embed::{CategoryMap, FactorEmbedding};
pub use ingest::{CaseSeries, FeatureTable, GeoUnitId};
pub use select::{SelectionResult, StandardizedMatrix};
pub use target::TargetVector;
