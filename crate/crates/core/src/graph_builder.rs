//! Graph-signal smoothness and top-k Euclidean graph construction.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{
    load_graph, symmetric_neighbors, write_file, GraphView, HeteroGraph, RelationType, Schema,
};
use crate::rng::seeded;
use crate::topo::TopologyEmbeddings;

pub const FEATURES_FILE: &str = "features.tsv";
const NODE_TYPE: &str = "target";
const RELATION: &str = "knn";

/// The constructed graph: target nodes, directed top-k edges, and topology
/// embeddings as node features. Traversal views use the symmetrized edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothGraph {
    node_ids: Vec<usize>,
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    adjacency: Vec<Vec<usize>>,
}

impl SmoothGraph {
    /// `edges` are directed pairs of local row indices.
    pub fn new(
        node_ids: Vec<usize>,
        names: Vec<String>,
        edges: Vec<(usize, usize)>,
        features: Array2<f64>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if names.len() != n || features.nrows() != n {
            return Err(Error::Shape(format!(
                "{n} nodes, {} names, {} feature rows",
                names.len(),
                features.nrows()
            )));
        }
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::Graph(format!("edge ({a}, {b}) out of range")));
        }
        let adjacency = symmetric_neighbors(n, edges.iter().copied());
        Ok(Self {
            node_ids,
            names,
            edges,
            features,
            adjacency,
        })
    }

    /// Homogeneous view of a raw graph: every node, every edge, raw features.
    pub fn from_hetero(graph: &HeteroGraph) -> Self {
        let n = graph.node_count();
        Self::new(
            (0..n).collect(),
            graph.node_names().to_vec(),
            graph.edges().iter().map(|e| (e.src, e.dst)).collect(),
            graph.features().clone(),
        )
        .expect("hetero graph is already validated")
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn out_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_ids.len()];
        for &(a, _) in &self.edges {
            deg[a] += 1;
        }
        deg
    }

    /// Undirected edges `(a, b)` with `a < b` of the symmetrized view.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        undirected(&self.adjacency)
    }

    /// `features.tsv` (node format), `edges.tsv` and `schema.json`; loadable as a
    /// one-type, one-relation graph.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut nodes = String::new();
        for (name, row) in self.names.iter().zip(self.features.rows()) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(nodes, "{name}\t{NODE_TYPE}\t{}", cells.join(","));
        }
        write_file(&dir.join(FEATURES_FILE), &nodes)?;
        let mut edges = String::new();
        for &(a, b) in &self.edges {
            let _ = writeln!(edges, "{}\t{}\t{RELATION}", self.names[a], self.names[b]);
        }
        write_file(&dir.join(crate::hetgraph::EDGES_FILE), &edges)?;
        Self::schema().save(&dir.join(crate::hetgraph::SCHEMA_FILE))
    }

    fn schema() -> Schema {
        Schema {
            node_types: vec![NODE_TYPE.into()],
            relations: vec![RelationType {
                name: RELATION.into(),
                source: NODE_TYPE.into(),
                destination: NODE_TYPE.into(),
            }],
            target_type: NODE_TYPE.into(),
            allow_homogeneous: true,
        }
    }

    /// Reads a directory written by [`SmoothGraph::write_dir`]. Node ids become file positions.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let schema = Schema::load(&dir.join(crate::hetgraph::SCHEMA_FILE))?;
        let g = load_graph(
            &dir.join(FEATURES_FILE),
            &dir.join(crate::hetgraph::EDGES_FILE),
            &dir.join("labels.absent"),
            &schema,
        )?;
        Self::new(
            (0..g.node_count()).collect(),
            g.node_names().to_vec(),
            g.edges().iter().map(|e| (e.src, e.dst)).collect(),
            g.features().clone(),
        )
    }
}

impl GraphView for SmoothGraph {
    fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }
}

fn undirected(adjacency: &[Vec<usize>]) -> Vec<(usize, usize)> {
    adjacency
        .iter()
        .enumerate()
        .flat_map(|(a, list)| list.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
        .collect()
}

/// Weighted Laplacian `L = D − W`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    pub degree: Array1<f64>,
    pub weights: Array2<f64>,
    pub laplacian: Array2<f64>,
}

impl GraphLaplacian {
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::Shape(format!(
                "weight matrix {:?} is not square",
                weights.dim()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(
                "edge weights must be finite and nonnegative".into(),
            ));
        }
        let degree: Array1<f64> = weights.rows().into_iter().map(|r| r.sum()).collect();
        let mut laplacian = -&weights;
        for (i, d) in degree.iter().enumerate() {
            laplacian[[i, i]] += d;
        }
        Ok(Self {
            degree,
            weights,
            laplacian,
        })
    }

    /// Unit weights on the undirected edges `(a, b)`.
    pub fn from_undirected(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut w = Array2::<f64>::zeros((n, n));
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Graph(format!("edge ({a}, {b}) out of range")));
            }
            if a != b {
                w[[a, b]] = 1.0;
                w[[b, a]] = 1.0;
            }
        }
        Self::from_weights(w)
    }

    pub fn of_view<G: GraphView + ?Sized>(graph: &G) -> Self {
        let n = graph.node_count();
        let mut w = Array2::<f64>::zeros((n, n));
        for a in 0..n {
            for &b in graph.neighbors_of(a) {
                w[[a, b]] = 1.0;
            }
        }
        Self::from_weights(w).expect("unit weights are valid")
    }

    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }
}

/// `yᵀ L y`.
pub fn smoothness(laplacian: &GraphLaplacian, signal: ArrayView1<f64>) -> Result<f64> {
    if signal.len() != laplacian.len() {
        return Err(Error::Shape(format!(
            "signal length {} vs {} nodes",
            signal.len(),
            laplacian.len()
        )));
    }
    Ok(signal.dot(&laplacian.laplacian.dot(&signal)))
}

/// Smoothness of every column of `signals`.
pub fn column_smoothness(laplacian: &GraphLaplacian, signals: &Array2<f64>) -> Result<Vec<f64>> {
    signals
        .columns()
        .into_iter()
        .map(|c| smoothness(laplacian, c))
        .collect()
}

/// Sum of per-column smoothness, `trace(Xᵀ L X)`.
pub fn matrix_smoothness(laplacian: &GraphLaplacian, signals: &Array2<f64>) -> Result<f64> {
    Ok(column_smoothness(laplacian, signals)?.iter().sum())
}

/// Squared Euclidean distances by direct subtraction; symmetric with an exact zero diagonal.
pub fn pairwise_sq_distances(embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 rows, got {n}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = embeddings.row(i);
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        a.iter()
                            .zip(embeddings.row(j).iter())
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .max(0.0)
                    }
                })
                .collect()
        })
        .collect();
    Ok(Array2::from_shape_vec((n, n), rows.concat()).expect("n × n"))
}

/// Keeps, for each node, its `k` nearest peers (ties → smaller node id).
///
/// `k ≥ n` is clamped to `n − 1` with a warning.
pub fn topk_graph(embeddings: &Array2<f64>, node_ids: &[usize], k: usize) -> Result<SmoothGraph> {
    let n = embeddings.nrows();
    if node_ids.len() != n {
        return Err(Error::Shape(format!("{} ids for {n} rows", node_ids.len())));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    let dist = pairwise_sq_distances(embeddings)?;
    let k = effective_k(k, n);
    let per_node: Vec<Vec<(usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                dist[[i, a]]
                    .total_cmp(&dist[[i, b]])
                    .then(node_ids[a].cmp(&node_ids[b]))
            });
            order.truncate(k);
            order.into_iter().map(|j| (i, j)).collect()
        })
        .collect();
    SmoothGraph::new(
        node_ids.to_vec(),
        node_ids.iter().map(usize::to_string).collect(),
        per_node.concat(),
        embeddings.clone(),
    )
}

fn effective_k(k: usize, n: usize) -> usize {
    if k >= n {
        warn!("k = {k} >= {n} nodes; clamped to {}", n - 1);
        n - 1
    } else {
        k
    }
}

/// Degree-preserving randomization of an undirected edge set by double edge swaps.
pub fn degree_matched_random<R: Rng + ?Sized>(
    n: usize,
    edges: &[(usize, usize)],
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let norm = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let mut current: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| norm(a, b)).collect();
    let mut present: HashSet<(usize, usize)> = current.iter().copied().collect();
    let m = current.len();
    if m < 2 || n < 4 {
        return current;
    }
    for _ in 0..10 * m {
        let i = rng.random_range(0..m);
        let j = rng.random_range(0..m);
        if i == j {
            continue;
        }
        let (a, b) = current[i];
        let (mut c, mut d) = current[j];
        if rng.random_bool(0.5) {
            std::mem::swap(&mut c, &mut d);
        }
        // (a, b), (c, d) → (a, d), (c, b)
        if a == d || c == b {
            continue;
        }
        let (e1, e2) = (norm(a, d), norm(c, b));
        if e1 == e2 || present.contains(&e1) || present.contains(&e2) {
            continue;
        }
        present.remove(&current[i]);
        present.remove(&current[j]);
        present.insert(e1);
        present.insert(e2);
        current[i] = e1;
        current[j] = e2;
    }
    current.sort_unstable();
    current
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub k_requested: usize,
    pub k_used: usize,
    pub nodes: usize,
    pub directed_edges: usize,
    pub undirected_edges: usize,
    /// `trace(X̃ᵀ L X̃)` on the symmetrized built graph.
    pub built_smoothness: f64,
    /// Same signals on a degree-matched randomization of the built graph.
    pub random_smoothness: f64,
}

/// Top-k graph over the target-type nodes.
pub fn build_new_graph(
    topo: &TopologyEmbeddings,
    graph: &HeteroGraph,
    k: usize,
    seed: u64,
) -> Result<(SmoothGraph, SmoothnessReport)> {
    build_graph_over_types(topo, graph, &[graph.target_type()], k, seed)
}

/// Top-k graph over every node whose type is in `types`.
pub fn build_graph_over_types(
    topo: &TopologyEmbeddings,
    graph: &HeteroGraph,
    types: &[usize],
    k: usize,
    seed: u64,
) -> Result<(SmoothGraph, SmoothnessReport)> {
    let nodes = graph.nodes_of_types(types);
    if nodes.is_empty() {
        return Err(Error::Graph("no target nodes".into()));
    }
    if nodes.len() < 2 {
        return Err(Error::Graph("need at least two target nodes".into()));
    }
    let rows = topo.rows_for(&nodes)?;
    let mut built = topk_graph(&rows, &nodes, k)?;
    built.names = nodes
        .iter()
        .map(|&v| graph.node_names()[v].clone())
        .collect();

    let n = nodes.len();
    let undirected_edges = built.undirected_edges();
    let lap = GraphLaplacian::from_undirected(n, &undirected_edges)?;
    let random = degree_matched_random(n, &undirected_edges, &mut seeded(seed));
    let random_lap = GraphLaplacian::from_undirected(n, &random)?;
    let report = SmoothnessReport {
        k_requested: k,
        k_used: k.min(n - 1),
        nodes: n,
        directed_edges: built.edges.len(),
        undirected_edges: undirected_edges.len(),
        built_smoothness: matrix_smoothness(&lap, built.features())?,
        random_smoothness: matrix_smoothness(&random_lap, built.features())?,
    };
    Ok((built, report))
}

/// Shuffled copy of the rows of `x` indexed by `perm`.
pub(crate) fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(x.dim());
    for (i, &src) in perm.iter().enumerate() {
        out.row_mut(i).assign(&x.row(src));
    }
    out
}

/// Uniform permutation of `0..n`.
#[cfg(test)]
pub(crate) fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Degree histogram, used in reports and tests.
pub fn degree_histogram<G: GraphView + ?Sized>(graph: &G) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in 0..graph.node_count() {
        *h.entry(graph.neighbors_of(v).len()).or_insert(0) += 1;
    }
    h
}
