//! Dense GNN kernels with hand-derived gradients.
//!
//! Row convention throughout: a feature matrix has one row per node, and a
//! layer maps `H (n × d_in)` to `H W (n × d_out)`.

mod activation;
mod encoder;
mod gat;
mod gcn;
mod gradcheck;
mod optim;
mod params;

pub use activation::{leaky_relu, log_sigmoid, sigmoid, softplus, Activation};
pub use encoder::{Backbone, Encoder, EncoderTrace};
pub use gat::{gat_attention, gat_backward, gat_forward, GatParams, GatTrace};
pub use gcn::{gcn_backward, gcn_forward, GcnParams, GcnTrace};
pub use gradcheck::{grad_check, numeric_gradient};
pub use optim::Adam;
pub use params::{glorot_uniform, read_snapshot, write_snapshot, Parameters, Snapshot};

/// Default LeakyReLU slope for hidden layers and attention logits.
pub const LEAKY_SLOPE: f64 = 0.2;
