use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::gat::{gat_backward, gat_forward, GatParams, GatTrace};
use super::gcn::{gcn_backward, gcn_forward, GcnParams, GcnTrace};
use super::params::{read_snapshot, write_snapshot, Parameters, Snapshot};
use super::LEAKY_SLOPE;
use crate::error::{Error, Result};
use crate::hetgraph::{normalized_adjacency, GraphView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Gat,
}

/// A GCN or GAT encoder behind one forward/backward interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Gcn(GcnParams),
    Gat(GatParams),
}

#[derive(Debug, Clone)]
pub enum EncoderTrace {
    Gcn { adj: Array2<f64>, trace: GcnTrace },
    Gat(GatTrace),
}

impl EncoderTrace {
    pub fn output(&self) -> &Array2<f64> {
        match self {
            EncoderTrace::Gcn { trace, .. } => trace.output(),
            EncoderTrace::Gat(t) => t.output(),
        }
    }
}

const HIDDEN: Activation = Activation::LeakyRelu(LEAKY_SLOPE);

impl Encoder {
    pub fn init<R: Rng + ?Sized>(backbone: Backbone, dims: &[usize], rng: &mut R) -> Self {
        match backbone {
            Backbone::Gcn => Encoder::Gcn(GcnParams::init(dims, rng)),
            Backbone::Gat => Encoder::Gat(GatParams::init(dims, LEAKY_SLOPE, rng)),
        }
    }

    pub fn backbone(&self) -> Backbone {
        match self {
            Encoder::Gcn(_) => Backbone::Gcn,
            Encoder::Gat(_) => Backbone::Gat,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Gcn(p) => p.output_dim(),
            Encoder::Gat(p) => p.output_dim(),
        }
    }

    /// Encodes every node of `graph` (local indices) from `features`.
    pub fn forward<G: GraphView + ?Sized>(
        &self,
        graph: &G,
        features: &Array2<f64>,
    ) -> Result<EncoderTrace> {
        match self {
            Encoder::Gcn(p) => {
                let all: Vec<usize> = (0..graph.node_count()).collect();
                let adj = normalized_adjacency(graph, &all)?.matrix;
                let trace = gcn_forward(&adj, features, p, HIDDEN)?;
                Ok(EncoderTrace::Gcn { adj, trace })
            }
            Encoder::Gat(p) => Ok(EncoderTrace::Gat(gat_forward(graph, features, p, HIDDEN)?)),
        }
    }

    /// Like [`Encoder::forward`] with the normalized adjacency of `graph` supplied by the caller.
    pub fn forward_prepared<G: GraphView + ?Sized>(
        &self,
        graph: &G,
        adj: &Array2<f64>,
        features: &Array2<f64>,
    ) -> Result<EncoderTrace> {
        match self {
            Encoder::Gcn(p) => Ok(EncoderTrace::Gcn {
                adj: adj.clone(),
                trace: gcn_forward(adj, features, p, HIDDEN)?,
            }),
            Encoder::Gat(p) => Ok(EncoderTrace::Gat(gat_forward(graph, features, p, HIDDEN)?)),
        }
    }

    pub fn backward(&self, trace: &EncoderTrace, upstream: &Array2<f64>) -> Result<Encoder> {
        match (self, trace) {
            (Encoder::Gcn(p), EncoderTrace::Gcn { adj, trace }) => {
                Ok(Encoder::Gcn(gcn_backward(adj, trace, p, upstream)?.0))
            }
            (Encoder::Gat(p), EncoderTrace::Gat(t)) => {
                Ok(Encoder::Gat(gat_backward(t, p, upstream)?.0))
            }
            _ => Err(Error::Shape("trace backbone does not match encoder".into())),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        match self {
            Encoder::Gcn(p) => Snapshot {
                kind: "gcn".into(),
                meta: vec![],
                tensors: p.weights.clone(),
            },
            Encoder::Gat(p) => {
                let mut tensors = p.weights.clone();
                tensors.extend(
                    p.attention
                        .iter()
                        .map(|a| a.clone().insert_axis(ndarray::Axis(0))),
                );
                Snapshot {
                    kind: "gat".into(),
                    meta: vec![("leaky_slope".into(), format!("{:.16e}", p.leaky_slope))],
                    tensors,
                }
            }
        }
    }

    pub fn from_snapshot(snap: Snapshot) -> Result<Self> {
        match snap.kind.as_str() {
            "gcn" => {
                let p = GcnParams {
                    weights: snap.tensors,
                };
                p.validate()?;
                Ok(Encoder::Gcn(p))
            }
            "gat" => {
                let slope = snap
                    .meta
                    .iter()
                    .find(|(k, _)| k == "leaky_slope")
                    .and_then(|(_, v)| v.parse().ok())
                    .unwrap_or(LEAKY_SLOPE);
                let half = snap.tensors.len() / 2;
                let mut tensors = snap.tensors;
                let attention: Vec<Array1<f64>> = tensors
                    .split_off(half)
                    .into_iter()
                    .map(|a| a.row(0).to_owned())
                    .collect();
                let p = GatParams {
                    weights: tensors,
                    attention,
                    leaky_slope: slope,
                };
                p.validate()?;
                Ok(Encoder::Gat(p))
            }
            other => Err(Error::InvalidInput(format!(
                "unknown encoder kind `{other}`"
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_snapshot(path, &self.snapshot())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_snapshot(read_snapshot(path)?)
    }
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Encoder::Gcn(p) => p.tensors(),
            Encoder::Gat(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Encoder::Gcn(p) => p.tensors_mut(),
            Encoder::Gat(p) => p.tensors_mut(),
        }
    }
}
