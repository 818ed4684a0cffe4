use ndarray::Array2;
use rand::Rng;

use super::activation::Activation;
use super::params::{glorot_uniform, slice, slice_mut, standard, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub weights: Vec<Array2<f64>>,
}

impl GcnParams {
    /// Glorot-initialized weights for the width chain `dims[0] → dims[1] → …`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        Self {
            weights: dims
                .windows(2)
                .map(|w| glorot_uniform(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Shape("GCN has no layers".into()));
        }
        for (l, pair) in self.weights.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].ncols(),
                    l + 1,
                    pair[1].nrows()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }
}

impl Parameters for GcnParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights.iter().map(slice).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights.iter_mut().map(slice_mut).collect()
    }
}

/// Activations cached by [`gcn_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GcnTrace {
    /// `Â H^{(l-1)}` per layer.
    propagated: Vec<Array2<f64>>,
    /// `Â H^{(l-1)} W^{(l)}` per layer.
    pre: Vec<Array2<f64>>,
    /// `H^{(l)}` per layer (index 0 is the first hidden layer).
    outputs: Vec<Array2<f64>>,
    activation: Activation,
}

impl GcnTrace {
    pub fn outputs(&self) -> &[Array2<f64>] {
        &self.outputs
    }

    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least one layer")
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

/// `H^{(l)} = act(Â H^{(l-1)} W^{(l)})` with `H^{(0)} = features`.
///
/// `activation` is applied after every layer except the last, which stays
/// linear so the training objective supplies its own nonlinearity.
pub fn gcn_forward(
    adj: &Array2<f64>,
    features: &Array2<f64>,
    params: &GcnParams,
    activation: Activation,
) -> Result<GcnTrace> {
    params.validate()?;
    let n = adj.nrows();
    if adj.ncols() != n || features.nrows() != n {
        return Err(Error::Shape(format!(
            "adjacency {:?} vs features {:?}",
            adj.dim(),
            features.dim()
        )));
    }
    if features.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "feature width {} but first layer expects {}",
            features.ncols(),
            params.input_dim()
        )));
    }
    let layers = params.weights.len();
    let mut propagated = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers);
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(layers);
    for (l, w) in params.weights.iter().enumerate() {
        let input = if l == 0 { features } else { &outputs[l - 1] };
        let ah = adj.dot(input);
        let z = ah.dot(w);
        let act = if l + 1 == layers {
            Activation::Identity
        } else {
            activation
        };
        let h = z.mapv(|x| act.apply(x));
        propagated.push(ah);
        pre.push(z);
        outputs.push(h);
    }
    Ok(GcnTrace {
        propagated,
        pre,
        outputs,
        activation,
    })
}

/// Reverse pass: gradients for every weight plus the gradient with respect to the input features.
pub fn gcn_backward(
    adj: &Array2<f64>,
    trace: &GcnTrace,
    params: &GcnParams,
    upstream: &Array2<f64>,
) -> Result<(GcnParams, Array2<f64>)> {
    let layers = params.weights.len();
    if trace.pre.len() != layers {
        return Err(Error::Shape("trace does not match parameters".into()));
    }
    if upstream.dim() != trace.output().dim() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} vs output {:?}",
            upstream.dim(),
            trace.output().dim()
        )));
    }
    let mut grads = params.zeros_like();
    let mut d_out = upstream.clone();
    for l in (0..layers).rev() {
        let act = if l + 1 == layers {
            Activation::Identity
        } else {
            trace.activation
        };
        let mut dz = d_out;
        if act != Activation::Identity {
            dz.zip_mut_with(&trace.pre[l], |g, &z| *g *= act.derivative(z));
        }
        grads.weights[l] += &trace.propagated[l].t().dot(&dz);
        d_out = standard(adj.t().dot(&dz.dot(&params.weights[l].t())));
    }
    Ok((grads, d_out))
}
