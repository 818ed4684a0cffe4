//! Heterogeneous graph model.
//!
//! Edges are stored exactly as read (directed, typed). Every traversal and
//! GNN view goes through [`GraphView`], which exposes the symmetrized,
//! deduplicated neighbor lists. Self-loops only ever appear inside
//! [`normalized_adjacency`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SCHEMA_FILE: &str = "schema.json";
pub const ID_MAP_FILE: &str = "id_map.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub name: String,
    pub source: String,
    pub destination: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: Vec<String>,
    pub relations: Vec<RelationType>,
    pub target_type: String,
    /// Lifts the `|types| + |relations| > 2` restriction (test graphs, exported kNN graphs).
    #[serde(default)]
    pub allow_homogeneous: bool,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.node_types.is_empty() {
            return Err(Error::Schema("no node types".into()));
        }
        let mut seen = HashSet::new();
        for t in &self.node_types {
            if !seen.insert(t.as_str()) {
                return Err(Error::Schema(format!("duplicate node type `{t}`")));
            }
        }
        let mut seen_rel = HashSet::new();
        for r in &self.relations {
            if !seen_rel.insert(r.name.as_str()) {
                return Err(Error::Schema(format!("duplicate relation `{}`", r.name)));
            }
            for end in [&r.source, &r.destination] {
                if !seen.contains(end.as_str()) {
                    return Err(Error::Schema(format!(
                        "relation `{}` references unknown node type `{end}`",
                        r.name
                    )));
                }
            }
        }
        if !seen.contains(self.target_type.as_str()) {
            return Err(Error::Schema(format!(
                "target type `{}` is not a node type",
                self.target_type
            )));
        }
        if !self.allow_homogeneous && self.node_types.len() + self.relations.len() <= 2 {
            return Err(Error::Schema(
                "graph is not heterogeneous (|types| + |relations| <= 2)".into(),
            ));
        }
        Ok(())
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: usize,
}

/// Read-only undirected adjacency.
pub trait GraphView {
    fn node_count(&self) -> usize;

    /// Sorted, deduplicated neighbors of `node` (no self entries).
    fn neighbors_of(&self, node: usize) -> &[usize];

    fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors_of(a).binary_search(&b).is_ok()
    }
}

/// Builds sorted, deduplicated, self-free symmetric neighbor lists.
pub(crate) fn symmetric_neighbors(
    n: usize,
    pairs: impl IntoIterator<Item = (usize, usize)>,
) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in pairs {
        if a == b {
            continue;
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    schema: Schema,
    node_names: Vec<String>,
    node_type_of: Vec<usize>,
    edges: Vec<Edge>,
    features: Array2<f64>,
    target_type: usize,
    labels: BTreeMap<usize, usize>,
    adjacency: Vec<Vec<usize>>,
}

impl HeteroGraph {
    /// Assembles and validates a graph from already-indexed parts.
    pub fn new(
        schema: Schema,
        node_names: Vec<String>,
        node_type_of: Vec<usize>,
        edges: Vec<Edge>,
        features: Array2<f64>,
        labels: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = node_names.len();
        if node_type_of.len() != n {
            return Err(Error::Graph(format!(
                "{} node names but {} node types",
                n,
                node_type_of.len()
            )));
        }
        if features.nrows() != n {
            return Err(Error::Graph(format!(
                "feature rows {} != node count {n}",
                features.nrows()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Graph("feature dimension must be positive".into()));
        }
        if let Some(bad) = node_type_of.iter().find(|&&t| t >= schema.node_types.len()) {
            return Err(Error::Graph(format!("node type index {bad} out of range")));
        }
        let mut names = HashSet::with_capacity(n);
        for name in &node_names {
            if !names.insert(name.as_str()) {
                return Err(Error::Graph(format!("duplicate node id `{name}`")));
            }
        }
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Graph(format!(
                    "unknown node id in edge ({}, {})",
                    e.src, e.dst
                )));
            }
            let rel = schema
                .relations
                .get(e.relation)
                .ok_or_else(|| Error::Graph(format!("relation {} out of range", e.relation)))?;
            let (s, d) = (
                &schema.node_types[node_type_of[e.src]],
                &schema.node_types[node_type_of[e.dst]],
            );
            if *s != rel.source || *d != rel.destination {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) has types ({s}, {d}) but relation `{}` expects ({}, {})",
                    node_names[e.src], node_names[e.dst], rel.name, rel.source, rel.destination
                )));
            }
        }
        let target_type = schema
            .type_index(&schema.target_type)
            .ok_or_else(|| Error::Schema("target type missing".into()))?;
        for &node in labels.keys() {
            if node >= n {
                return Err(Error::Graph(format!("label on unknown node id {node}")));
            }
            if node_type_of[node] != target_type {
                return Err(Error::Graph(format!(
                    "label on non-target type for node `{}`",
                    node_names[node]
                )));
            }
        }
        let adjacency = symmetric_neighbors(n, edges.iter().map(|e| (e.src, e.dst)));
        Ok(Self {
            schema,
            node_names,
            node_type_of,
            edges,
            features,
            target_type,
            labels,
            adjacency,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_type_of(&self, node: usize) -> usize {
        self.node_type_of[node]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_type_of
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn target_type(&self) -> usize {
        self.target_type
    }

    pub fn labels(&self) -> &BTreeMap<usize, usize> {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.values().max().map_or(0, |&c| c + 1)
    }

    /// Target-type nodes in ascending id order.
    pub fn target_nodes(&self) -> Vec<usize> {
        self.nodes_of_types(&[self.target_type])
    }

    pub fn nodes_of_types(&self, types: &[usize]) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&v| types.contains(&self.node_type_of[v]))
            .collect()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.node_names.iter().position(|n| n == name)
    }

    pub fn name_index(&self) -> HashMap<&str, usize> {
        self.node_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect()
    }

    /// Symmetrized neighbor list; see [`neighbors`].
    pub fn neighbors(&self, node: usize) -> Result<&[usize]> {
        neighbors(self, node)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Same nodes, features, and labels with a different edge list.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        Self::new(
            self.schema.clone(),
            self.node_names.clone(),
            self.node_type_of.clone(),
            edges,
            self.features.clone(),
            self.labels.clone(),
        )
    }

    /// Writes nodes/edges/labels/schema files that [`load_graph_dir`] reads back identically.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut nodes = String::new();
        for (i, name) in self.node_names.iter().enumerate() {
            let row: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                nodes,
                "{name}\t{}\t{}",
                self.schema.node_types[self.node_type_of[i]],
                row.join(",")
            );
        }
        write_file(&dir.join(NODES_FILE), &nodes)?;
        let mut edges = String::new();
        for e in &self.edges {
            let _ = writeln!(
                edges,
                "{}\t{}\t{}",
                self.node_names[e.src],
                self.node_names[e.dst],
                self.schema.relations[e.relation].name
            );
        }
        write_file(&dir.join(EDGES_FILE), &edges)?;
        let mut labels = String::new();
        for (&node, &class) in &self.labels {
            let _ = writeln!(labels, "{}\t{class}", self.node_names[node]);
        }
        write_file(&dir.join(LABELS_FILE), &labels)?;
        self.schema.save(&dir.join(SCHEMA_FILE))?;
        self.write_id_map(&dir.join(ID_MAP_FILE))
    }

    /// Dense index to original id, one `<index>\t<id>` line per node.
    pub fn write_id_map(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, name) in self.node_names.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{name}");
        }
        write_file(path, &out)
    }
}

impl GraphView for HeteroGraph {
    fn node_count(&self) -> usize {
        self.node_names.len()
    }

    fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .collect())
}

/// Parses a comma-separated float row.
pub(crate) fn parse_floats(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad float `{}`: {e}", s.trim()))
        })
        .collect()
}

/// Loads and validates a graph from the TSV formats.
///
/// Node ids are re-indexed densely in file order. A node line with an empty
/// feature column gets a zero row (with a warning).
pub fn load_graph(
    node_file: &Path,
    edge_file: &Path,
    label_file: &Path,
    schema: &Schema,
) -> Result<HeteroGraph> {
    schema.validate()?;
    let mut names = Vec::new();
    let mut types = Vec::new();
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dim: Option<usize> = None;
    let malformed = |path: &Path, line: usize, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };

    for (line, text) in read_lines(node_file)? {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(malformed(
                node_file,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(malformed(node_file, line, "empty node id".into()));
        }
        let ty = schema
            .type_index(fields[1].trim())
            .ok_or_else(|| Error::UnknownType {
                path: node_file.to_path_buf(),
                line,
                name: fields[1].trim().to_string(),
            })?;
        let feat = match fields.get(2).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            Some(raw) => {
                let values = parse_floats(raw).map_err(|r| malformed(node_file, line, r))?;
                match dim {
                    Some(d) if d != values.len() => {
                        return Err(Error::FeatureDimension {
                            path: node_file.to_path_buf(),
                            line,
                            expected: d,
                            found: values.len(),
                        })
                    }
                    _ => dim = Some(values.len()),
                }
                Some(values)
            }
            None => None,
        };
        if index.insert(id.to_string(), names.len()).is_some() {
            return Err(malformed(
                node_file,
                line,
                format!("duplicate node id `{id}`"),
            ));
        }
        names.push(id.to_string());
        types.push(ty);
        rows.push(feat);
    }

    let d = dim.ok_or_else(|| Error::Graph(format!("{}: no feature rows", node_file.display())))?;
    let n = names.len();
    let mut features = Array2::<f64>::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        match row {
            Some(values) => features
                .row_mut(i)
                .iter_mut()
                .zip(values)
                .for_each(|(f, v)| *f = *v),
            None => warn!("node `{}` has no features; zero-filled", names[i]),
        }
    }

    let lookup = |path: &Path, line: usize, id: &str| -> Result<usize> {
        index.get(id).copied().ok_or_else(|| Error::UnknownNode {
            path: path.to_path_buf(),
            line,
            id: id.to_string(),
        })
    };

    let mut edges = Vec::new();
    for (line, text) in read_lines(edge_file)? {
        let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(malformed(
                edge_file,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let src = lookup(edge_file, line, fields[0])?;
        let dst = lookup(edge_file, line, fields[1])?;
        let relation = schema
            .relation_index(fields[2])
            .ok_or_else(|| Error::UnknownType {
                path: edge_file.to_path_buf(),
                line,
                name: fields[2].to_string(),
            })?;
        let rel = &schema.relations[relation];
        if schema.node_types[types[src]] != rel.source
            || schema.node_types[types[dst]] != rel.destination
        {
            return Err(malformed(
                edge_file,
                line,
                format!(
                    "relation `{}` expects ({}, {}) endpoints",
                    rel.name, rel.source, rel.destination
                ),
            ));
        }
        edges.push(Edge { src, dst, relation });
    }

    let target = schema
        .type_index(&schema.target_type)
        .expect("validated schema");
    let mut labels = BTreeMap::new();
    if label_file.exists() {
        for (line, text) in read_lines(label_file)? {
            let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(malformed(
                    label_file,
                    line,
                    format!("expected 2 tab-separated fields, found {}", fields.len()),
                ));
            }
            let node = lookup(label_file, line, fields[0])?;
            if types[node] != target {
                return Err(Error::LabelOnNonTarget {
                    path: label_file.to_path_buf(),
                    line,
                    id: fields[0].to_string(),
                });
            }
            let class: usize = fields[1]
                .parse()
                .map_err(|e| malformed(label_file, line, format!("bad class id: {e}")))?;
            labels.insert(node, class);
        }
    }

    HeteroGraph::new(schema.clone(), names, types, edges, features, labels)
}

/// Loads `nodes.tsv`, `edges.tsv`, `labels.tsv` (optional) and `schema.json` from one directory.
pub fn load_graph_dir(dir: &Path) -> Result<HeteroGraph> {
    let schema = Schema::load(&dir.join(SCHEMA_FILE))?;
    load_graph(
        &dir.join(NODES_FILE),
        &dir.join(EDGES_FILE),
        &dir.join(LABELS_FILE),
        &schema,
    )
}

/// Sorted, deduplicated union of in- and out-neighbors over all relations.
pub fn neighbors<G: GraphView + ?Sized>(graph: &G, node: usize) -> Result<&[usize]> {
    if node >= graph.node_count() {
        return Err(Error::InvalidNode(node));
    }
    Ok(graph.neighbors_of(node))
}

/// Normalized adjacency over an ordered node subset.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseAdjacency {
    pub matrix: Array2<f64>,
    pub node_index: Vec<usize>,
}

/// `D^{-1/2} (A + I) D^{-1/2}` of the induced, undirected, unweighted subgraph on `subset`.
pub fn normalized_adjacency<G: GraphView + ?Sized>(
    graph: &G,
    subset: &[usize],
) -> Result<DenseAdjacency> {
    if subset.is_empty() {
        return Err(Error::InvalidInput("empty node subset".into()));
    }
    let local = local_index(graph, subset)?;
    let n = subset.len();
    let mut a = Array2::<f64>::eye(n);
    for (i, &u) in subset.iter().enumerate() {
        for v in graph.neighbors_of(u) {
            if let Some(&j) = local.get(v) {
                a[[i, j]] = 1.0;
            }
        }
    }
    let inv_sqrt: Vec<f64> = a.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    for ((i, j), v) in a.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    Ok(DenseAdjacency {
        matrix: a,
        node_index: subset.to_vec(),
    })
}

fn local_index<G: GraphView + ?Sized>(
    graph: &G,
    subset: &[usize],
) -> Result<HashMap<usize, usize>> {
    let mut local = HashMap::with_capacity(subset.len());
    for (i, &u) in subset.iter().enumerate() {
        if u >= graph.node_count() {
            return Err(Error::InvalidNode(u));
        }
        if local.insert(u, i).is_some() {
            return Err(Error::InvalidInput(format!("node {u} repeated in subset")));
        }
    }
    Ok(local)
}

/// Induced subgraph with local indices `0..nodes.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub nodes: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

impl LocalGraph {
    pub fn induced<G: GraphView + ?Sized>(graph: &G, subset: &[usize]) -> Result<Self> {
        let local = local_index(graph, subset)?;
        let adjacency = subset
            .iter()
            .map(|u| {
                let mut list: Vec<usize> = graph
                    .neighbors_of(*u)
                    .iter()
                    .filter_map(|v| local.get(v).copied())
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        Ok(Self {
            nodes: subset.to_vec(),
            adjacency,
        })
    }
}

impl GraphView for LocalGraph {
    fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }
}

/// Node list and undirected `(a, b)` edges with `a < b`.
pub type NodesAndEdges = (Vec<usize>, Vec<(usize, usize)>);

/// Center followed by its sorted neighbors, plus every undirected edge among them
/// as `(a, b)` with `a < b`.
pub fn one_hop_subgraph<G: GraphView + ?Sized>(graph: &G, center: usize) -> Result<NodesAndEdges> {
    let nbrs = neighbors(graph, center)?;
    let mut nodes = Vec::with_capacity(nbrs.len() + 1);
    nodes.push(center);
    nodes.extend_from_slice(nbrs);
    let members: HashSet<usize> = nodes.iter().copied().collect();
    let mut edges = Vec::new();
    for &u in &nodes {
        for &v in graph.neighbors_of(u) {
            if u < v && members.contains(&v) {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    Ok((nodes, edges))
}

pub fn schema_path(dir: &Path) -> PathBuf {
    dir.join(SCHEMA_FILE)
}
