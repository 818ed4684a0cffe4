//! Two-stage heterogeneous graph representation learning.
//!
//! Stage one samples label-constrained second-order random walks over a
//! heterogeneous graph, fits topology embeddings with a GNN encoder under a
//! skip-gram objective, and turns those embeddings into a sparse top-k
//! Euclidean graph over the target nodes. Stage two encodes every node of that
//! graph from its one-hop subgraph and trains the encoder by distilling
//! regional and global knowledge through a Jensen-Shannon mutual-information
//! estimator. Downstream evaluation uses a prompt-prefixed linear decoder for
//! node classification and a dot-product scorer for link prediction.
//!
//! Module map:
//!
//! | module | role |
//! |--------|------|
//! | [`hetgraph`] | typed graph model, TSV/JSON ingestion, adjacency views |
//! | [`walk`] | biased walks, label filtering, context pairs, negatives |
//! | [`gnn`] | GCN/GAT layers with analytic gradients, Adam, gradient checker |
//! | [`topo`] | stage-one skip-gram training of the topology encoder |
//! | [`graph_builder`] | smoothness diagnostics and top-k graph construction |
//! | [`repr`] | stage-two mutual-information distillation |
//! | [`decoder`] | prompt decoder and link scorer |
//! | [`eval`] | fold protocol, F1, AUC, edge-removal protocol |
//! | [`synth`] | synthetic heterogeneous datasets |
//! | [`pipeline`] | configuration, stage chaining, artifacts, k sweep |

pub mod decoder;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph_builder;
pub mod hetgraph;
pub mod io;
pub mod pipeline;
pub mod repr;
pub mod rng;
pub mod synth;
pub mod topo;
pub mod walk;

pub use error::{Error, Result};
