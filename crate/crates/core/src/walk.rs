//! Second-order biased random walks and skip-gram sampling.
//!
//! The kernel is the return/in-out scheme: a step from `curr` (reached from
//! `prev`) to neighbor `a` has unnormalized weight `1/p` if `a == prev`, `1` if
//! `a` is adjacent to `prev`, and `1/q` otherwise.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{write_file, GraphView};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives_per_positive: usize,
    /// Per-(prev, curr) weight tables are precomputed when the symmetrized
    /// edge count is below this limit; above it weights are computed per step.
    pub precompute_edge_limit: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 1.0,
            walk_length: 80,
            walks_per_node: 10,
            window: 5,
            negatives_per_positive: 5,
            precompute_edge_limit: 2_000_000,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) || !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::Config(format!(
                "walk p and q must be positive (p={}, q={})",
                self.p, self.q
            )));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be >= 2".into()));
        }
        if self.walks_per_node == 0 || self.window == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "walks_per_node, window and negatives_per_positive must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk {
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextPair {
    pub center: usize,
    pub context: usize,
}

/// Normalized step distribution from `curr`; `prev = None` is the uniform first step.
///
/// Returns an empty list when `curr` has no neighbors.
pub fn transition_weights<G: GraphView + ?Sized>(
    graph: &G,
    prev: Option<usize>,
    curr: usize,
    p: f64,
    q: f64,
) -> Vec<(usize, f64)> {
    let nbrs = graph.neighbors_of(curr);
    if nbrs.is_empty() {
        return Vec::new();
    }
    let raw: Vec<f64> = nbrs.iter().map(|&a| bias(graph, prev, a, p, q)).collect();
    let z: f64 = raw.iter().sum();
    nbrs.iter().zip(raw).map(|(&a, w)| (a, w / z)).collect()
}

#[inline]
fn bias<G: GraphView + ?Sized>(graph: &G, prev: Option<usize>, next: usize, p: f64, q: f64) -> f64 {
    match prev {
        None => 1.0,
        Some(t) if t == next => 1.0 / p,
        Some(t) if graph.is_adjacent(t, next) => 1.0,
        Some(_) => 1.0 / q,
    }
}

/// Draws walks with either precomputed cumulative tables or per-step weights.
pub struct WalkSampler<'g, G: GraphView + ?Sized> {
    graph: &'g G,
    p: f64,
    q: f64,
    walk_length: usize,
    /// `tables[curr][i]` is the cumulative distribution for `prev = neighbors(curr)[i]`.
    tables: Option<Vec<Vec<Vec<f64>>>>,
}

impl<'g, G: GraphView + Sync + ?Sized> WalkSampler<'g, G> {
    pub fn new(graph: &'g G, config: &WalkConfig) -> Self {
        let directed: usize = (0..graph.node_count())
            .map(|v| graph.neighbors_of(v).len())
            .sum();
        let tables = (directed < config.precompute_edge_limit).then(|| {
            (0..graph.node_count())
                .into_par_iter()
                .map(|curr| {
                    graph
                        .neighbors_of(curr)
                        .iter()
                        .map(|&prev| {
                            cumulative(&transition_weights(
                                graph,
                                Some(prev),
                                curr,
                                config.p,
                                config.q,
                            ))
                        })
                        .collect()
                })
                .collect()
        });
        Self {
            graph,
            p: config.p,
            q: config.q,
            walk_length: config.walk_length,
            tables,
        }
    }

    pub fn on_the_fly(graph: &'g G, config: &WalkConfig) -> Self {
        Self {
            graph,
            p: config.p,
            q: config.q,
            walk_length: config.walk_length,
            tables: None,
        }
    }

    pub fn is_precomputed(&self) -> bool {
        self.tables.is_some()
    }

    /// One step from `curr`; `None` at a dead end.
    pub fn step<R: Rng + ?Sized>(
        &self,
        prev: Option<usize>,
        curr: usize,
        rng: &mut R,
    ) -> Option<usize> {
        let nbrs = self.graph.neighbors_of(curr);
        if nbrs.is_empty() {
            return None;
        }
        let u: f64 = rng.random();
        let pick = match (prev, &self.tables) {
            (None, _) => ((u * nbrs.len() as f64) as usize).min(nbrs.len() - 1),
            (Some(t), Some(tables)) => {
                let slot = nbrs
                    .binary_search(&t)
                    .expect("prev must be a neighbor of curr");
                draw(&tables[curr][slot], u)
            }
            (Some(_), None) => {
                let cdf = cumulative(&transition_weights(self.graph, prev, curr, self.p, self.q));
                draw(&cdf, u)
            }
        };
        Some(nbrs[pick])
    }

    pub fn walk<R: Rng + ?Sized>(&self, start: usize, rng: &mut R) -> Walk {
        let mut nodes = Vec::with_capacity(self.walk_length);
        nodes.push(start);
        let mut prev = None;
        let mut curr = start;
        while nodes.len() < self.walk_length {
            match self.step(prev, curr, rng) {
                Some(next) => {
                    nodes.push(next);
                    prev = Some(curr);
                    curr = next;
                }
                None => break,
            }
        }
        Walk { nodes }
    }
}

fn cumulative(weights: &[(usize, f64)]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|(_, w)| {
            acc += w;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty distribution");
    cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1)
}

/// A single walk from `start`, weights computed per step.
pub fn sample_walk<G: GraphView + Sync + ?Sized, R: Rng + ?Sized>(
    graph: &G,
    start: usize,
    config: &WalkConfig,
    rng: &mut R,
) -> Result<Walk> {
    if start >= graph.node_count() {
        return Err(Error::InvalidNode(start));
    }
    Ok(WalkSampler::on_the_fly(graph, config).walk(start, rng))
}

/// `walks_per_node` walks from every node in `starts`.
///
/// Each start node draws from its own sub-stream of `config.seed`, and the
/// output is ordered by (start position, walk index), so the result does not
/// depend on the number of worker threads.
pub fn generate_walks<G: GraphView + Sync + ?Sized>(
    graph: &G,
    starts: &[usize],
    config: &WalkConfig,
) -> Result<Vec<Walk>> {
    config.validate()?;
    if let Some(&bad) = starts.iter().find(|&&s| s >= graph.node_count()) {
        return Err(Error::InvalidNode(bad));
    }
    let sampler = WalkSampler::new(graph, config);
    let per_start: Vec<Vec<Walk>> = starts
        .par_iter()
        .map(|&s| {
            let mut rng = substream(config.seed, s as u64);
            (0..config.walks_per_node)
                .map(|_| sampler.walk(s, &mut rng))
                .collect()
        })
        .collect();
    Ok(per_start.into_iter().flatten().collect())
}

/// Keeps walks whose visible labeled nodes all share one class.
///
/// Only nodes in `training` with a label count; unlabeled and held-out nodes
/// never disqualify a walk. Dropped walks are not resampled.
pub fn retain_labeled_walks(
    walks: &[Walk],
    labels: &BTreeMap<usize, usize>,
    training: &HashSet<usize>,
) -> Vec<Walk> {
    walks
        .iter()
        .filter(|w| is_label_homogeneous(w, labels, training))
        .cloned()
        .collect()
}

pub fn is_label_homogeneous(
    walk: &Walk,
    labels: &BTreeMap<usize, usize>,
    training: &HashSet<usize>,
) -> bool {
    let mut class = None;
    for v in &walk.nodes {
        if !training.contains(v) {
            continue;
        }
        if let Some(&c) = labels.get(v) {
            match class {
                None => class = Some(c),
                Some(k) if k != c => return false,
                _ => {}
            }
        }
    }
    true
}

/// Ordered pairs within `window` positions, excluding pairs of equal nodes.
pub fn context_pairs(walk: &Walk, window: usize) -> Vec<ContextPair> {
    let nodes = &walk.nodes;
    let mut out = Vec::new();
    for (i, &center) in nodes.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(nodes.len().saturating_sub(1));
        for (j, &context) in nodes.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i && context != center {
                out.push(ContextPair { center, context });
            }
        }
    }
    out
}

/// Negative-sampling table with weights `degree^0.75`.
#[derive(Debug, Clone)]
pub struct DegreeTable {
    nodes: Vec<usize>,
    weights: Vec<f64>,
    dist: Option<WeightedIndex<f64>>,
}

impl DegreeTable {
    pub fn new(nodes: Vec<usize>, degrees: &[f64]) -> Result<Self> {
        if nodes.len() != degrees.len() {
            return Err(Error::Shape(format!(
                "{} candidates but {} degrees",
                nodes.len(),
                degrees.len()
            )));
        }
        if degrees.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput(
                "degrees must be finite and nonnegative".into(),
            ));
        }
        let weights: Vec<f64> = degrees.iter().map(|d| d.powf(0.75)).collect();
        let dist = WeightedIndex::new(&weights).ok();
        Ok(Self {
            nodes,
            weights,
            dist,
        })
    }

    pub fn from_graph<G: GraphView + ?Sized>(graph: &G) -> Result<Self> {
        let n = graph.node_count();
        let degrees: Vec<f64> = (0..n).map(|v| graph.neighbors_of(v).len() as f64).collect();
        Self::new((0..n).collect(), &degrees)
    }

    /// Restricted to `nodes`, weighted by their degree in `graph`.
    pub fn over<G: GraphView + ?Sized>(graph: &G, nodes: &[usize]) -> Result<Self> {
        let degrees: Vec<f64> = nodes
            .iter()
            .map(|&v| graph.neighbors_of(v).len() as f64)
            .collect();
        Self::new(nodes.to_vec(), &degrees)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn weight_excluding(&self, center: usize) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(v, _)| **v != center)
            .map(|(_, w)| w)
            .sum()
    }
}

/// `count` draws with replacement, probability proportional to `degree^0.75`, never `center`.
pub fn sample_negatives<R: Rng + ?Sized>(
    center: usize,
    count: usize,
    table: &DegreeTable,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let dist = table.dist.as_ref().ok_or(Error::NoNegativeCandidates)?;
    if table.weight_excluding(center) <= 0.0 {
        return Err(Error::NoNegativeCandidates);
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = table.nodes[dist.sample(rng)];
        if v != center {
            out.push(v);
        }
    }
    Ok(out)
}

/// One walk per line, space-separated dense node ids.
pub fn write_walks(path: &Path, walks: &[Walk]) -> Result<()> {
    let mut out = String::new();
    for w in walks {
        let ids: Vec<String> = w.nodes.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{}", ids.join(" "));
    }
    write_file(path, &out)
}

pub fn read_walks(path: &Path) -> Result<Vec<Walk>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(|nodes| Walk { nodes })
                .map_err(|e| Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
        })
        .collect()
}
