//! Stage two: representation learning on the constructed graph.
//!
//! Every node is encoded by a GCN run on its own one-hop subgraph, keeping
//! only the center row. Two Jensen-Shannon mutual-information terms tie the
//! node embedding `h_i` to
//!
//! * its regional knowledge `l_i = σ(mean of neighbor h_j)`, contrasted with
//!   the regional knowledge of randomly chosen other nodes, and
//! * the global knowledge `p = σ(mean of all h_j)`, contrasted with the same
//!   summary computed from row-shuffled features.
//!
//! Both critics are bilinear, `g(u, v) = uᵀ M v`, with one `M` per branch.

use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{
    gcn_backward, gcn_forward, glorot_uniform, read_snapshot, sigmoid, softplus, write_snapshot,
    Activation, Adam, GcnParams, GcnTrace, Parameters, Snapshot, LEAKY_SLOPE,
};
use crate::graph_builder::{permute_rows, SmoothGraph};
use crate::hetgraph::{normalized_adjacency, one_hop_subgraph, GraphView};
use crate::rng::seeded;
use crate::topo::LEARNING_RATE_GRID;

const HIDDEN: Activation = Activation::LeakyRelu(LEAKY_SLOPE);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_node: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dim: 64,
            out_dim: 64,
            learning_rate: 1e-3,
            epochs: 100,
            negatives_per_node: 5,
            seed: 0,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(
                "repr layers, hidden_dim and out_dim must be positive".into(),
            ));
        }
        if self.negatives_per_node == 0 {
            return Err(Error::Config(
                "repr negatives_per_node must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "repr learning_rate {}",
                self.learning_rate
            )));
        }
        if !LEARNING_RATE_GRID.contains(&self.learning_rate) {
            warn!(
                "repr learning rate {} is outside the default grid",
                self.learning_rate
            );
        }
        Ok(())
    }

    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.layers - 1));
        dims.push(self.out_dim);
        dims
    }
}

/// `h_i`, `l_i` and the global summary `p` for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeTriple {
    pub node_emb: Array1<f64>,
    pub regional: Array1<f64>,
    pub global: Array1<f64>,
}

/// Bilinear critics for the regional and global branches.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub regional: Array2<f64>,
    pub global: Array2<f64>,
}

impl Discriminator {
    pub fn score(m: &Array2<f64>, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        u.dot(&m.dot(&v))
    }
}

/// Encoder weights plus both critics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprModel {
    pub encoder: GcnParams,
    pub discriminator: Discriminator,
}

impl ReprModel {
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let encoder = GcnParams::init(dims, rng);
        let d = encoder.output_dim();
        let regional = glorot_uniform(d, d, rng);
        let global = glorot_uniform(d, d, rng);
        Self {
            encoder,
            discriminator: Discriminator { regional, global },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = self.encoder.weights.clone();
        tensors.push(self.discriminator.regional.clone());
        tensors.push(self.discriminator.global.clone());
        write_snapshot(
            path,
            &Snapshot {
                kind: "repr".into(),
                meta: vec![],
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap = read_snapshot(path)?;
        if snap.kind != "repr" || snap.tensors.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "{} is not a repr snapshot",
                path.display()
            )));
        }
        let mut weights = snap.tensors;
        let global = weights.pop().unwrap_or_default();
        let regional = weights.pop().unwrap_or_default();
        let encoder = GcnParams { weights };
        encoder.validate()?;
        Ok(Self {
            encoder,
            discriminator: Discriminator { regional, global },
        })
    }
}

impl Parameters for ReprModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.push(
            self.discriminator
                .regional
                .as_slice()
                .expect("standard layout"),
        );
        t.push(
            self.discriminator
                .global
                .as_slice()
                .expect("standard layout"),
        );
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.push(
            self.discriminator
                .regional
                .as_slice_mut()
                .expect("standard layout"),
        );
        t.push(
            self.discriminator
                .global
                .as_slice_mut()
                .expect("standard layout"),
        );
        t
    }
}

/// One-hop subgraph of a node: center first, then its neighbors.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub adjacency: Array2<f64>,
}

/// Per-node one-hop subgraphs of `graph`, in node order.
pub fn subgraphs<G: GraphView + Sync + ?Sized>(graph: &G) -> Result<Vec<Subgraph>> {
    (0..graph.node_count())
        .into_par_iter()
        .map(|v| {
            let (nodes, _) = one_hop_subgraph(graph, v)?;
            let adjacency = normalized_adjacency(graph, &nodes)?.matrix;
            Ok(Subgraph { nodes, adjacency })
        })
        .collect()
}

fn encode_subgraph(sub: &Subgraph, features: &Array2<f64>, params: &GcnParams) -> Result<GcnTrace> {
    let mut x = Array2::<f64>::zeros((sub.nodes.len(), features.ncols()));
    for (r, &v) in sub.nodes.iter().enumerate() {
        x.row_mut(r).assign(&features.row(v));
    }
    gcn_forward(&sub.adjacency, &x, params, HIDDEN)
}

/// Center row of the GCN output on the node's one-hop subgraph.
pub fn encode_node(graph: &SmoothGraph, node: usize, params: &GcnParams) -> Result<Array1<f64>> {
    encode_node_with(graph, graph.features(), node, params)
}

/// [`encode_node`] with caller-supplied features (for example a corrupted copy).
pub fn encode_node_with<G: GraphView + ?Sized>(
    graph: &G,
    features: &Array2<f64>,
    node: usize,
    params: &GcnParams,
) -> Result<Array1<f64>> {
    if node >= graph.node_count() {
        return Err(Error::InvalidNode(node));
    }
    if features.nrows() != graph.node_count() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            features.nrows(),
            graph.node_count()
        )));
    }
    let (nodes, _) = one_hop_subgraph(graph, node)?;
    let adjacency = normalized_adjacency(graph, &nodes)?.matrix;
    let trace = encode_subgraph(&Subgraph { nodes, adjacency }, features, params)?;
    Ok(trace.output().row(0).to_owned())
}

/// `σ(mean of neighbor rows)`; falls back to `σ(center)` without neighbors.
pub fn regional_knowledge(neighbor_embs: &Array2<f64>, center: ArrayView1<f64>) -> Array1<f64> {
    if neighbor_embs.nrows() == 0 {
        warn!("node without neighbors: regional knowledge falls back to its own embedding");
        return center.mapv(sigmoid);
    }
    let k = neighbor_embs.nrows() as f64;
    neighbor_embs
        .sum_axis(ndarray::Axis(0))
        .mapv(|v| sigmoid(v / k))
}

/// `σ(mean of all rows)`.
pub fn global_knowledge(all_node_embs: &Array2<f64>) -> Result<Array1<f64>> {
    if all_node_embs.nrows() == 0 {
        return Err(Error::InvalidInput(
            "global knowledge of an empty graph".into(),
        ));
    }
    let n = all_node_embs.nrows() as f64;
    Ok(all_node_embs
        .sum_axis(ndarray::Axis(0))
        .mapv(|v| sigmoid(v / n)))
}

/// Jensen-Shannon MI estimate: `mean(−sp(−pos)) − mean(sp(neg))`.
pub fn jsd_mi(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::InvalidInput(
            "JSD estimate needs positive and negative scores".into(),
        ));
    }
    let pos = pos_scores.iter().map(|&s| -softplus(-s)).sum::<f64>() / pos_scores.len() as f64;
    let neg = neg_scores.iter().map(|&s| softplus(s)).sum::<f64>() / neg_scores.len() as f64;
    Ok(pos - neg)
}

/// Gradient of `−jsd_mi` with respect to each score.
pub fn jsd_loss_grad(pos_scores: &[f64], neg_scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let np = pos_scores.len() as f64;
    let nn = neg_scores.len() as f64;
    (
        pos_scores.iter().map(|&s| -sigmoid(-s) / np).collect(),
        neg_scores.iter().map(|&s| sigmoid(s) / nn).collect(),
    )
}

/// A uniformly random non-identity permutation of the rows.
pub fn corrupt_features<R: Rng + ?Sized>(
    features: &Array2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let perm = corruption_permutation(features.nrows(), rng)?;
    Ok(permute_rows(features, &perm))
}

/// Uniform over the `n! − 1` non-identity permutations (rejection sampling).
pub fn corruption_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidInput(
            "corruption needs at least two rows".into(),
        ));
    }
    loop {
        let mut p: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(p.as_mut_slice(), rng);
        if p.iter().enumerate().any(|(i, &v)| i != v) {
            return Ok(p);
        }
    }
}

/// Random draws fixed for one optimization step.
#[derive(Debug, Clone)]
pub struct StepSamples {
    /// Corrupted feature matrix.
    pub corrupted: Array2<f64>,
    /// Per node, the other nodes whose regional knowledge serves as negatives.
    pub negatives: Vec<Vec<usize>>,
}

impl StepSamples {
    pub fn draw<R: Rng + ?Sized>(
        features: &Array2<f64>,
        per_node: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = features.nrows();
        let corrupted = corrupt_features(features, rng)?;
        let negatives = (0..n)
            .map(|i| {
                (0..per_node)
                    .map(|_| {
                        let j = rng.random_range(0..n - 1);
                        if j >= i {
                            j + 1
                        } else {
                            j
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            corrupted,
            negatives,
        })
    }
}

struct Encoded {
    traces: Vec<GcnTrace>,
    h: Array2<f64>,
}

fn encode_all_traced(
    subs: &[Subgraph],
    features: &Array2<f64>,
    params: &GcnParams,
) -> Result<Encoded> {
    let traces: Vec<GcnTrace> = subs
        .par_iter()
        .map(|s| encode_subgraph(s, features, params))
        .collect::<Result<_>>()?;
    let d = params.output_dim();
    let mut h = Array2::<f64>::zeros((subs.len(), d));
    for (i, t) in traces.iter().enumerate() {
        h.row_mut(i).assign(&t.output().row(0));
    }
    Ok(Encoded { traces, h })
}

fn backprop_centers(
    subs: &[Subgraph],
    enc: &Encoded,
    params: &GcnParams,
    dh: &Array2<f64>,
) -> Result<GcnParams> {
    let grads: Vec<GcnParams> = subs
        .par_iter()
        .zip(&enc.traces)
        .enumerate()
        .map(|(i, (s, t))| {
            let mut up = Array2::<f64>::zeros((s.nodes.len(), params.output_dim()));
            up.row_mut(0).assign(&dh.row(i));
            Ok(gcn_backward(&s.adjacency, t, params, &up)?.0)
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    for g in &grads {
        total.accumulate(g, 1.0);
    }
    Ok(total)
}

/// Distillation loss `−(1/n) Σ_i [MI(h_i, l_i) + MI(h_i, p)]` and its gradient.
pub fn distillation_loss(
    model: &ReprModel,
    subs: &[Subgraph],
    features: &Array2<f64>,
    samples: &StepSamples,
) -> Result<(f64, ReprModel)> {
    let n = subs.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty graph".into()));
    }
    let Discriminator {
        regional: mr,
        global: mg,
    } = &model.discriminator;
    let clean = encode_all_traced(subs, features, &model.encoder)?;
    let corrupt = encode_all_traced(subs, &samples.corrupted, &model.encoder)?;
    let h = &clean.h;
    let d = h.ncols();

    // Regional knowledge per node.
    let mut l = Array2::<f64>::zeros((n, d));
    for (i, s) in subs.iter().enumerate() {
        let nb = &s.nodes[1..];
        if nb.is_empty() {
            l.row_mut(i).assign(&h.row(i).mapv(sigmoid));
        } else {
            let mut acc = Array1::<f64>::zeros(d);
            for &j in nb {
                acc += &h.row(j);
            }
            l.row_mut(i)
                .assign(&acc.mapv(|v| sigmoid(v / nb.len() as f64)));
        }
    }
    let p = global_knowledge(h)?;
    let p_hat = global_knowledge(&corrupt.h)?;
    let mg_p = mg.dot(&p);
    let mg_p_hat = mg.dot(&p_hat);
    let l_mr = l.dot(&mr.t()); // row i = M_r l_i

    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dh = Array2::<f64>::zeros((n, d));
    let mut dl = Array2::<f64>::zeros((n, d));
    let mut dp = Array1::<f64>::zeros(d);
    let mut dp_hat = Array1::<f64>::zeros(d);
    let mut dmr = Array2::<f64>::zeros((d, d));
    let mut dmg = Array2::<f64>::zeros((d, d));

    for i in 0..n {
        let hi = h.row(i);
        // Regional branch.
        let pos = [hi.dot(&l_mr.row(i))];
        let neg: Vec<f64> = samples.negatives[i]
            .iter()
            .map(|&k| hi.dot(&l_mr.row(k)))
            .collect();
        loss -= jsd_mi(&pos, &neg)?;
        let (gp, gn) = jsd_loss_grad(&pos, &neg);
        let mut pairs: Vec<(usize, f64)> = vec![(i, gp[0])];
        pairs.extend(samples.negatives[i].iter().copied().zip(gn));
        let mt_h = mr.t().dot(&hi);
        for (k, g) in pairs {
            let g = g * scale;
            dh.row_mut(i).scaled_add(g, &l_mr.row(k));
            dl.row_mut(k).scaled_add(g, &mt_h);
            add_outer(&mut dmr, g, hi, l.row(k));
        }
        // Global branch.
        let pos = [hi.dot(&mg_p)];
        let neg = [hi.dot(&mg_p_hat)];
        loss -= jsd_mi(&pos, &neg)?;
        let (gp, gn) = jsd_loss_grad(&pos, &neg);
        let (gp, gn) = (gp[0] * scale, gn[0] * scale);
        dh.row_mut(i).scaled_add(gp, &mg_p);
        dh.row_mut(i).scaled_add(gn, &mg_p_hat);
        let mt_h = mg.t().dot(&hi);
        dp.scaled_add(gp, &mt_h);
        dp_hat.scaled_add(gn, &mt_h);
        add_outer(&mut dmg, gp, hi, p.view());
        add_outer(&mut dmg, gn, hi, p_hat.view());
    }
    loss *= scale;

    // Through the sigmoids and means back into h.
    for (i, s) in subs.iter().enumerate() {
        let dz = &dl.row(i) * &l.row(i).mapv(|v| v * (1.0 - v));
        let nb = &s.nodes[1..];
        if nb.is_empty() {
            dh.row_mut(i).scaled_add(1.0, &dz);
        } else {
            let w = 1.0 / nb.len() as f64;
            for &j in nb {
                dh.row_mut(j).scaled_add(w, &dz);
            }
        }
    }
    let dz = &dp * &p.mapv(|v| v * (1.0 - v));
    let dz_hat = &dp_hat * &p_hat.mapv(|v| v * (1.0 - v));
    let mut dh_hat = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        dh.row_mut(i).scaled_add(scale, &dz);
        dh_hat.row_mut(i).scaled_add(scale, &dz_hat);
    }

    let mut encoder = backprop_centers(subs, &clean, &model.encoder, &dh)?;
    encoder.accumulate(
        &backprop_centers(subs, &corrupt, &model.encoder, &dh_hat)?,
        1.0,
    );
    Ok((
        loss,
        ReprModel {
            encoder,
            discriminator: Discriminator {
                regional: dmr,
                global: dmg,
            },
        },
    ))
}

fn add_outer(m: &mut Array2<f64>, scale: f64, u: ArrayView1<f64>, v: ArrayView1<f64>) {
    for (r, &ur) in u.iter().enumerate() {
        m.row_mut(r).scaled_add(scale * ur, &v);
    }
}

/// Center-row encodings of every node.
pub fn encode_graph(
    model: &ReprModel,
    subs: &[Subgraph],
    features: &Array2<f64>,
) -> Result<Array2<f64>> {
    Ok(encode_all_traced(subs, features, &model.encoder)?.h)
}

/// Knowledge triples of every node under the current model.
pub fn knowledge(model: &ReprModel, graph: &SmoothGraph) -> Result<Vec<KnowledgeTriple>> {
    let subs = subgraphs(graph)?;
    let h = encode_graph(model, &subs, graph.features())?;
    let p = global_knowledge(&h)?;
    Ok(subs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let nb: Vec<usize> = s.nodes[1..].to_vec();
            let rows = h.select(ndarray::Axis(0), &nb);
            KnowledgeTriple {
                node_emb: h.row(i).to_owned(),
                regional: regional_knowledge(&rows, h.row(i)),
                global: p.clone(),
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ReprOutcome {
    /// One row per node of the constructed graph.
    pub embeddings: Array2<f64>,
    pub model: ReprModel,
    /// Loss per epoch.
    pub losses: Vec<f64>,
}

/// Full-batch training of the distillation objective.
pub fn train_representation(graph: &SmoothGraph, config: &ReprConfig) -> Result<ReprOutcome> {
    config.validate()?;
    let features = graph.features();
    if features.nrows() < 2 {
        return Err(Error::Graph(
            "representation learning needs at least two nodes".into(),
        ));
    }
    let mut rng = seeded(config.seed);
    let mut model = ReprModel::init(&config.dims(features.ncols()), &mut rng);
    let subs = subgraphs(graph)?;
    let mut adam = Adam::new(config.learning_rate);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let samples = StepSamples::draw(features, config.negatives_per_node, &mut rng)?;
        let (loss, grads) = distillation_loss(&model, &subs, features, &samples)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Diverged(format!("representation epoch {epoch}")));
        }
        adam.step(&mut model, &grads);
        losses.push(loss);
    }
    let embeddings = encode_graph(&model, &subs, features)?;
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("final representation encoding".into()));
    }
    Ok(ReprOutcome {
        embeddings,
        model,
        losses,
    })
}
