//! Multi-behavior recommendation with cascading graph convolution.
//!
//! Each behavior in an ordered chain (for example `view > cart > buy`) gets
//! its own LightGCN block over that behavior's user-item graph. The block
//! output for one behavior, passed through a learned linear map, seeds the
//! next block. Final embeddings are aggregated across behaviors and items are
//! ranked by inner product with the user embedding.
//!
//! Module map:
//!
//! - [`data`]: ingestion, deduplication, leave-one-out splits, synthetic data
//! - [`graph`]: normalized bipartite adjacency and one propagation layer
//! - [`cascade`]: parameters, forward pass and scoring
//! - [`checkpoint`]: binary parameter files
//! - [`grad`]: BPR loss, hand-derived gradients, finite-difference checking
//! - [`train`]: negative sampling, Adam, the epoch loop with early stopping
//! - [`eval`]: full-ranking Recall@K / NDCG@K
//!
//! Data-parallel kernels run on rayon when the `parallel` feature is enabled
//! (the default). Every kernel also has a sequential path selected through
//! [`Exec`], and both paths produce bitwise-identical results.

pub mod cascade;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod graph;
pub mod mat;
pub mod par;
pub mod real;
pub mod train;

pub use cascade::{Aggregation, CascadeParams, ForwardTrace, ModelConfig};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use graph::BehaviorGraph;
pub use mat::Mat;
pub use par::Exec;
pub use real::Real;
