//! Stochastic-block-style heterogeneous graphs for desk-scale experiments.
//!
//! Target nodes (type `P`) are grouped by class. Every auxiliary node has a
//! home class and links to targets of that class with probability `p_intra`
//! and to other targets with `p_inter`. A `hub_fraction` of the auxiliary
//! nodes are noise hubs instead: they have no home class and link to a
//! `hub_reach` share of all targets, so they always bridge classes.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{Edge, HeteroGraph, RelationType, Schema};
use crate::rng::{derive_seed, seeded};

pub const TARGET_TYPE: &str = "P";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxType {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub aux_types: Vec<AuxType>,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub class_sep: f64,
    pub hub_fraction: f64,
    pub hub_reach: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            nodes_per_class: 20,
            aux_types: vec![
                AuxType {
                    name: "A".into(),
                    count: 30,
                },
                AuxType {
                    name: "S".into(),
                    count: 6,
                },
            ],
            p_intra: 0.15,
            p_inter: 0.0,
            feature_dim: 16,
            feature_noise: 1.0,
            class_sep: 1.0,
            hub_fraction: 0.0,
            hub_reach: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("hub_fraction", self.hub_fraction),
            ("hub_reach", self.hub_reach),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.classes == 0 || self.nodes_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "synthetic spec has zero nodes, classes or feature width".into(),
            ));
        }
        if self.aux_types.is_empty() || self.aux_types.iter().any(|a| a.count == 0) {
            return Err(Error::Config(
                "every auxiliary type needs a positive count".into(),
            ));
        }
        if self.aux_types.iter().any(|a| a.name == TARGET_TYPE) {
            return Err(Error::Config(format!(
                "auxiliary type may not be named `{TARGET_TYPE}`"
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite())
            || !self.class_sep.is_finite()
        {
            return Err(Error::Config(
                "feature noise and class separation must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Reads a TOML spec; missing fields take their defaults.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn aux_total(&self) -> usize {
        self.aux_types.iter().map(|a| a.count).sum()
    }

    pub fn hub_count(&self) -> usize {
        (self.hub_fraction * self.aux_total() as f64).round() as usize
    }

    /// Class mean: `class_sep` on every coordinate `j` with `j mod classes == c`.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        (0..self.feature_dim)
            .map(|j| {
                if j % self.classes == class {
                    self.class_sep
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Generated graph plus which auxiliary nodes are noise hubs.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub graph: HeteroGraph,
    pub hubs: Vec<usize>,
}

pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = seeded(derive_seed(seed, "synthetic"));
    let n_targets = spec.classes * spec.nodes_per_class;
    let schema = Schema {
        node_types: std::iter::once(TARGET_TYPE.to_string())
            .chain(spec.aux_types.iter().map(|a| a.name.clone()))
            .collect(),
        relations: spec
            .aux_types
            .iter()
            .map(|a| RelationType {
                name: format!("{TARGET_TYPE}{}", a.name),
                source: TARGET_TYPE.into(),
                destination: a.name.clone(),
            })
            .collect(),
        target_type: TARGET_TYPE.into(),
        allow_homogeneous: false,
    };

    let mut names = Vec::new();
    let mut types = Vec::new();
    let mut labels = BTreeMap::new();
    for c in 0..spec.classes {
        for i in 0..spec.nodes_per_class {
            let v = names.len();
            names.push(format!("{TARGET_TYPE}{}", c * spec.nodes_per_class + i));
            types.push(0);
            labels.insert(v, c);
        }
    }
    // (node id, relation index)
    let mut aux = Vec::new();
    for (t, a) in spec.aux_types.iter().enumerate() {
        for i in 0..a.count {
            aux.push((names.len(), t));
            names.push(format!("{}{i}", a.name));
            types.push(t + 1);
        }
    }
    let mut hub_positions: Vec<usize> = (0..aux.len()).collect();
    hub_positions.shuffle(&mut rng);
    hub_positions.truncate(spec.hub_count());
    hub_positions.sort_unstable();
    let is_hub: Vec<bool> = (0..aux.len())
        .map(|i| hub_positions.binary_search(&i).is_ok())
        .collect();

    let class_of = |v: usize| v / spec.nodes_per_class;
    let mut home = vec![None; aux.len()];
    let mut next_home = 0;
    for (i, h) in home.iter_mut().enumerate() {
        if !is_hub[i] {
            *h = Some(next_home % spec.classes);
            next_home += 1;
        }
    }

    let mut edges = Vec::new();
    for (i, &(a, rel)) in aux.iter().enumerate() {
        match home[i] {
            Some(c) => {
                for v in 0..n_targets {
                    let p = if class_of(v) == c {
                        spec.p_intra
                    } else {
                        spec.p_inter
                    };
                    if rng.random_bool(p) {
                        edges.push(Edge {
                            src: v,
                            dst: a,
                            relation: rel,
                        });
                    }
                }
            }
            None => {
                let mut linked: Vec<usize> = (0..n_targets)
                    .filter(|_| rng.random_bool(spec.hub_reach))
                    .collect();
                // A hub always spans at least two classes.
                let first = linked.first().map_or(0, |&v| class_of(v));
                if spec.classes > 1 && linked.iter().all(|&v| class_of(v) == first) {
                    for c in [first, (first + 1) % spec.classes] {
                        linked.push(
                            c * spec.nodes_per_class + rng.random_range(0..spec.nodes_per_class),
                        );
                    }
                    linked.sort_unstable();
                    linked.dedup();
                }
                edges.extend(linked.into_iter().map(|v| Edge {
                    src: v,
                    dst: a,
                    relation: rel,
                }));
            }
        }
    }

    // No isolated nodes: attach stragglers to a same-class auxiliary node.
    let mut degree = vec![0usize; names.len()];
    for e in &edges {
        degree[e.src] += 1;
        degree[e.dst] += 1;
    }
    for v in 0..n_targets {
        if degree[v] == 0 {
            let pool: Vec<usize> = (0..aux.len())
                .filter(|&i| home[i] == Some(class_of(v)))
                .collect();
            let pool = if pool.is_empty() {
                (0..aux.len()).collect()
            } else {
                pool
            };
            let i = pool[rng.random_range(0..pool.len())];
            edges.push(Edge {
                src: v,
                dst: aux[i].0,
                relation: aux[i].1,
            });
            degree[v] += 1;
            degree[aux[i].0] += 1;
        }
    }
    for (i, &(a, rel)) in aux.iter().enumerate() {
        if degree[a] == 0 {
            let c = home[i].unwrap_or(0);
            let v = c * spec.nodes_per_class + rng.random_range(0..spec.nodes_per_class);
            edges.push(Edge {
                src: v,
                dst: a,
                relation: rel,
            });
            degree[a] += 1;
        }
    }
    edges.sort_unstable();

    let mut features = Array2::<f64>::zeros((names.len(), spec.feature_dim));
    for v in 0..names.len() {
        let mean = if v < n_targets {
            Some(spec.class_mean(class_of(v)))
        } else {
            home[v - n_targets].map(|c| spec.class_mean(c))
        };
        for j in 0..spec.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features[[v, j]] = mean.as_ref().map_or(0.0, |m| m[j]) + spec.feature_noise * noise;
        }
    }

    let graph = HeteroGraph::new(schema, names, types, edges, features, labels)?;
    let hubs = hub_positions.iter().map(|&i| aux[i].0).collect();
    Ok(Synthetic { graph, hubs })
}
