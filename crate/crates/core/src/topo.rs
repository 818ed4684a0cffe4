//! Stage one: topology embeddings.
//!
//! Each batch gathers a set of label-filtered walks, adds the one-hop
//! neighbors of every walk node, and encodes the induced subgraph with the
//! GNN backbone. The encoder output `f(v)` is fitted with skip-gram negative
//! sampling: positives are walk co-occurrences within the window, negatives
//! are drawn from the batch with probability proportional to `degree^0.75`.

use std::collections::HashMap;
use std::path::Path;

use log::{debug, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{sigmoid, softplus, Adam, Backbone, Encoder, Parameters};
use crate::hetgraph::{normalized_adjacency, DenseAdjacency, GraphView, HeteroGraph, LocalGraph};
use crate::io::{read_embeddings, write_embeddings};
use crate::rng::seeded;
use crate::walk::{context_pairs, sample_negatives, ContextPair, DegreeTable, Walk, WalkConfig};

/// Learning rates searched in the reference experiments.
pub const LEARNING_RATE_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopoConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_walks: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TopoConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gat,
            layers: 2,
            hidden_dim: 64,
            embed_dim: 64,
            learning_rate: 1e-3,
            epochs: 10,
            batch_walks: 128,
            seed: 0,
        }
    }
}

impl TopoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.batch_walks == 0
        {
            return Err(Error::Config(
                "topo layers, hidden_dim, embed_dim and batch_walks must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "topo learning_rate {}",
                self.learning_rate
            )));
        }
        if !LEARNING_RATE_GRID.contains(&self.learning_rate) {
            warn!(
                "topo learning rate {} is outside the default grid",
                self.learning_rate
            );
        }
        Ok(())
    }

    /// Layer widths `d_in → hidden… → embed_dim`.
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.layers - 1));
        dims.push(self.embed_dim);
        dims
    }
}

/// One row `f(v)` per covered node.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyEmbeddings {
    pub matrix: Array2<f64>,
    pub coverage: Vec<usize>,
}

impl TopologyEmbeddings {
    /// Rows for `nodes`, in that order.
    pub fn rows_for(&self, nodes: &[usize]) -> Result<Array2<f64>> {
        let position: HashMap<usize, usize> = self
            .coverage
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
        let mut out = Array2::<f64>::zeros((nodes.len(), self.matrix.ncols()));
        for (r, v) in nodes.iter().enumerate() {
            let src = position.get(v).ok_or_else(|| {
                Error::InvalidInput(format!("node {v} has no topology embedding"))
            })?;
            out.row_mut(r).assign(&self.matrix.row(*src));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path, graph: &HeteroGraph) -> Result<()> {
        let names: Vec<String> = self
            .coverage
            .iter()
            .map(|&v| graph.node_names()[v].clone())
            .collect();
        write_embeddings(path, &names, &self.matrix)
    }

    pub fn read(path: &Path, graph: &HeteroGraph) -> Result<Self> {
        let (names, matrix) = read_embeddings(path)?;
        let index = graph.name_index();
        let coverage = names
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("embedding for unknown node `{n}`")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { matrix, coverage })
    }
}

/// Nodes of a batch plus their induced symmetrized view.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Global node ids, ascending; local index = position.
    pub nodes: Vec<usize>,
    pub view: LocalGraph,
    pub adjacency: DenseAdjacency,
    pub local: HashMap<usize, usize>,
}

/// Walk nodes together with their one-hop neighbors.
pub fn build_batch<G: GraphView + ?Sized>(walks: &[&Walk], graph: &G) -> Result<Batch> {
    if walks.is_empty() {
        return Err(Error::InvalidInput("empty walk batch".into()));
    }
    let mut nodes = Vec::new();
    for w in walks {
        for &v in &w.nodes {
            if v >= graph.node_count() {
                return Err(Error::InvalidNode(v));
            }
            nodes.push(v);
            nodes.extend_from_slice(graph.neighbors_of(v));
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    let view = LocalGraph::induced(graph, &nodes)?;
    let adjacency = normalized_adjacency(graph, &nodes)?;
    let local = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    Ok(Batch {
        nodes,
        view,
        adjacency,
        local,
    })
}

/// Negative samples drawn for one positive pair's center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    pub center: usize,
    pub negatives: Vec<usize>,
}

/// Skip-gram negative-sampling loss over embedding rows and its gradient.
///
/// `Σ_{(v,u)} −log σ(f(v)·f(u)) + Σ_{(v,k)} −log(1 − σ(f(v)·f(k)))`.
pub fn skipgram_loss(
    embeddings: &Array2<f64>,
    positives: &[ContextPair],
    negatives: &[NegativeSet],
) -> Result<(f64, Array2<f64>)> {
    let n = embeddings.nrows();
    let check = |v: usize| {
        if v < n {
            Ok(())
        } else {
            Err(Error::InvalidNode(v))
        }
    };
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(embeddings.dim());
    for pair in positives {
        check(pair.center)?;
        check(pair.context)?;
        let (v, u) = (pair.center, pair.context);
        let x = embeddings.row(v).dot(&embeddings.row(u));
        loss += softplus(-x);
        let g = -sigmoid(-x);
        grad.row_mut(v).scaled_add(g, &embeddings.row(u));
        grad.row_mut(u).scaled_add(g, &embeddings.row(v));
    }
    for set in negatives {
        check(set.center)?;
        let v = set.center;
        for &k in &set.negatives {
            check(k)?;
            let x = embeddings.row(v).dot(&embeddings.row(k));
            loss += softplus(x);
            let g = sigmoid(x);
            grad.row_mut(v).scaled_add(g, &embeddings.row(k));
            grad.row_mut(k).scaled_add(g, &embeddings.row(v));
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct TopoOutcome {
    pub embeddings: TopologyEmbeddings,
    pub encoder: Encoder,
    /// Per-batch loss, averaged over the batch's positive pairs.
    pub losses: Vec<f64>,
}

/// Fits the encoder on `walks` and encodes every node of `graph` once at the end.
pub fn train_topology(
    graph: &HeteroGraph,
    walks: &[Walk],
    config: &TopoConfig,
    walk_config: &WalkConfig,
) -> Result<TopoOutcome> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let mut encoder = Encoder::init(config.backbone, &config.dims(graph.feature_dim()), &mut rng);
    let mut adam = Adam::new(config.learning_rate);
    let mut losses = Vec::new();
    let features = graph.features();

    if walks.is_empty() {
        warn!("no walks to train on; emitting untrained encoder output");
    }
    let mut order: Vec<usize> = (0..walks.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_walks) {
            let chunk_walks: Vec<&Walk> = chunk.iter().map(|&i| &walks[i]).collect();
            let batch = build_batch(&chunk_walks, graph)?;
            let positives: Vec<ContextPair> = chunk_walks
                .iter()
                .flat_map(|w| context_pairs(w, walk_config.window))
                .map(|p| ContextPair {
                    center: batch.local[&p.center],
                    context: batch.local[&p.context],
                })
                .collect();
            if positives.is_empty() {
                continue;
            }
            let degrees: Vec<f64> = batch
                .nodes
                .iter()
                .map(|&v| graph.degree(v) as f64)
                .collect();
            let table = DegreeTable::new((0..batch.nodes.len()).collect(), &degrees)?;
            let mut negatives = Vec::with_capacity(positives.len());
            for pair in &positives {
                match sample_negatives(
                    pair.center,
                    walk_config.negatives_per_positive,
                    &table,
                    &mut rng,
                ) {
                    Ok(neg) => negatives.push(NegativeSet {
                        center: pair.center,
                        negatives: neg,
                    }),
                    Err(Error::NoNegativeCandidates) => break,
                    Err(e) => return Err(e),
                }
            }
            if negatives.len() != positives.len() {
                debug!("batch without negative candidates skipped");
                continue;
            }

            let x = gather_rows(features, &batch.nodes);
            let trace = encoder.forward_prepared(&batch.view, &batch.adjacency.matrix, &x)?;
            let (loss, mut grad) = skipgram_loss(trace.output(), &positives, &negatives)?;
            let scale = 1.0 / positives.len() as f64;
            let loss = loss * scale;
            grad.mapv_inplace(|g| g * scale);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("topology epoch {epoch}")));
            }
            let grads = encoder.backward(&trace, &grad)?;
            if !grads.all_finite() {
                return Err(Error::Diverged(format!("topology gradient, epoch {epoch}")));
            }
            adam.step(&mut encoder, &grads);
            losses.push(loss);
        }
    }

    let embeddings = encode_all(&encoder, graph)?;
    Ok(TopoOutcome {
        embeddings,
        encoder,
        losses,
    })
}

/// Full-graph forward pass; covers every node.
pub fn encode_all(encoder: &Encoder, graph: &HeteroGraph) -> Result<TopologyEmbeddings> {
    let trace = encoder.forward(graph, graph.features())?;
    let matrix = trace.output().clone();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("final topology encoding".into()));
    }
    Ok(TopologyEmbeddings {
        matrix,
        coverage: (0..graph.node_count()).collect(),
    })
}

pub(crate) fn gather_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}
