use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::activation::{leaky_relu, Activation};
use super::params::{glorot_uniform, slice, slice_mut, standard, Parameters};
use crate::error::{Error, Result};
use crate::hetgraph::GraphView;

/// Single-head GAT parameters. `attention[l]` has length `2 × out_width(l)`:
/// the first half scores the center, the second half the neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub weights: Vec<Array2<f64>>,
    pub attention: Vec<Array1<f64>>,
    pub leaky_slope: f64,
}

impl GatParams {
    pub fn init<R: Rng + ?Sized>(dims: &[usize], leaky_slope: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut weights = Vec::new();
        let mut attention = Vec::new();
        for w in dims.windows(2) {
            weights.push(glorot_uniform(w[0], w[1], rng));
            let a = glorot_uniform(1, 2 * w[1], rng);
            attention.push(a.row(0).to_owned());
        }
        Self {
            weights,
            attention,
            leaky_slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.attention.len() {
            return Err(Error::Shape("GAT layer/attention count mismatch".into()));
        }
        for (l, (w, a)) in self.weights.iter().zip(&self.attention).enumerate() {
            if a.len() != 2 * w.ncols() {
                return Err(Error::Shape(format!(
                    "layer {l}: attention length {} != 2 × {}",
                    a.len(),
                    w.ncols()
                )));
            }
            if l > 0 && self.weights[l - 1].ncols() != w.nrows() {
                return Err(Error::Shape(format!("layer {l} input width mismatch")));
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

impl Parameters for GatParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.weights.iter().map(slice).collect();
        out.extend(
            self.attention
                .iter()
                .map(|a| a.as_slice().expect("contiguous")),
        );
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.weights.iter_mut().map(slice_mut).collect();
        out.extend(
            self.attention
                .iter_mut()
                .map(|a| a.as_slice_mut().expect("contiguous")),
        );
        out
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// Attention of `h_i` over the rows of `neighbor_embs` at `layer`.
///
/// The caller decides whether `h_i` itself is among the rows.
pub fn gat_attention(
    h_i: ArrayView1<f64>,
    neighbor_embs: ArrayView2<f64>,
    params: &GatParams,
    layer: usize,
) -> Result<Array1<f64>> {
    params.validate()?;
    let w = params
        .weights
        .get(layer)
        .ok_or_else(|| Error::Shape(format!("no layer {layer}")))?;
    if neighbor_embs.nrows() == 0 {
        return Err(Error::InvalidInput("empty neighbor set".into()));
    }
    if h_i.len() != w.nrows() || neighbor_embs.ncols() != w.nrows() {
        return Err(Error::Shape(
            "embedding width does not match layer input".into(),
        ));
    }
    let d = w.ncols();
    let a = &params.attention[layer];
    let (a_center, a_nbr) = (a.slice(s![..d]), a.slice(s![d..]));
    let center_score = h_i.dot(w).dot(&a_center);
    let mut logits: Vec<f64> = neighbor_embs
        .dot(w)
        .rows()
        .into_iter()
        .map(|z| leaky_relu(center_score + z.dot(&a_nbr), params.leaky_slope))
        .collect();
    softmax_in_place(&mut logits);
    Ok(Array1::from(logits))
}

#[derive(Debug, Clone)]
struct GatLayerCache {
    input: Array2<f64>,
    projected: Array2<f64>,
    /// Raw attention scores before LeakyReLU, aligned with `support`.
    scores: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    pre: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GatTrace {
    /// `N_i ∪ {i}` in ascending order per node.
    support: Vec<Vec<usize>>,
    layers: Vec<GatLayerCache>,
    outputs: Vec<Array2<f64>>,
    activation: Activation,
}

impl GatTrace {
    pub fn outputs(&self) -> &[Array2<f64>] {
        &self.outputs
    }

    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least one layer")
    }

    /// Attention weights of `layer`, one row per node aligned with [`GatTrace::support`].
    pub fn attention(&self, layer: usize) -> &[Vec<f64>] {
        &self.layers[layer].alpha
    }

    pub fn support(&self) -> &[Vec<usize>] {
        &self.support
    }
}

/// `h_i' = act(Σ_{j ∈ N_i ∪ {i}} α_ij W h_j)`; the last layer is linear.
pub fn gat_forward<G: GraphView + ?Sized>(
    graph: &G,
    features: &Array2<f64>,
    params: &GatParams,
    activation: Activation,
) -> Result<GatTrace> {
    params.validate()?;
    let n = graph.node_count();
    if features.nrows() != n || features.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "features {:?} for {n} nodes and input width {}",
            features.dim(),
            params.input_dim()
        )));
    }
    let support: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut s = graph.neighbors_of(i).to_vec();
            if let Err(pos) = s.binary_search(&i) {
                s.insert(pos, i);
            }
            s
        })
        .collect();

    let count = params.weights.len();
    let mut layers = Vec::with_capacity(count);
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(count);
    for l in 0..count {
        let input = if l == 0 {
            features.clone()
        } else {
            outputs[l - 1].clone()
        };
        let w = &params.weights[l];
        let d = w.ncols();
        let a = &params.attention[l];
        let z = input.dot(w);
        let center: Vec<f64> = z
            .rows()
            .into_iter()
            .map(|r| r.dot(&a.slice(s![..d])))
            .collect();
        let nbr: Vec<f64> = z
            .rows()
            .into_iter()
            .map(|r| r.dot(&a.slice(s![d..])))
            .collect();
        let mut scores = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        let mut pre = Array2::<f64>::zeros((n, d));
        for i in 0..n {
            let sc: Vec<f64> = support[i].iter().map(|&j| center[i] + nbr[j]).collect();
            let mut al: Vec<f64> = sc
                .iter()
                .map(|&x| leaky_relu(x, params.leaky_slope))
                .collect();
            softmax_in_place(&mut al);
            let mut row = pre.row_mut(i);
            for (&j, &w_ij) in support[i].iter().zip(&al) {
                row.scaled_add(w_ij, &z.row(j));
            }
            scores.push(sc);
            alpha.push(al);
        }
        let act = if l + 1 == count {
            Activation::Identity
        } else {
            activation
        };
        outputs.push(pre.mapv(|x| act.apply(x)));
        layers.push(GatLayerCache {
            input,
            projected: z,
            scores,
            alpha,
            pre,
        });
    }
    Ok(GatTrace {
        support,
        layers,
        outputs,
        activation,
    })
}

pub fn gat_backward(
    trace: &GatTrace,
    params: &GatParams,
    upstream: &Array2<f64>,
) -> Result<(GatParams, Array2<f64>)> {
    let count = params.weights.len();
    if trace.layers.len() != count {
        return Err(Error::Shape("trace does not match parameters".into()));
    }
    if upstream.dim() != trace.output().dim() {
        return Err(Error::Shape("upstream gradient shape".into()));
    }
    let slope = params.leaky_slope;
    let mut grads = params.zeros_like();
    let mut d_out = upstream.clone();
    for l in (0..count).rev() {
        let cache = &trace.layers[l];
        let w = &params.weights[l];
        let d = w.ncols();
        let a = &params.attention[l];
        let (a_center, a_nbr) = (a.slice(s![..d]), a.slice(s![d..]));
        let act = if l + 1 == count {
            Activation::Identity
        } else {
            trace.activation
        };
        let mut du = d_out;
        if act != Activation::Identity {
            du.zip_mut_with(&cache.pre, |g, &x| *g *= act.derivative(x));
        }
        let n = du.nrows();
        let z = &cache.projected;
        let mut dz = Array2::<f64>::zeros((n, d));
        let mut da = Array1::<f64>::zeros(2 * d);
        for i in 0..n {
            let du_i = du.row(i);
            let support = &trace.support[i];
            let alpha = &cache.alpha[i];
            let dalpha: Vec<f64> = support.iter().map(|&j| du_i.dot(&z.row(j))).collect();
            let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
            let mut d_center_score = 0.0;
            for (k, &j) in support.iter().enumerate() {
                dz.row_mut(j).scaled_add(alpha[k], &du_i);
                let de = alpha[k] * (dalpha[k] - mean);
                let ds = de * if cache.scores[i][k] > 0.0 { 1.0 } else { slope };
                d_center_score += ds;
                da.slice_mut(s![d..]).scaled_add(ds, &z.row(j));
                dz.row_mut(j).scaled_add(ds, &a_nbr);
            }
            da.slice_mut(s![..d]).scaled_add(d_center_score, &z.row(i));
            dz.row_mut(i).scaled_add(d_center_score, &a_center);
        }
        grads.weights[l] += &cache.input.t().dot(&dz);
        grads.attention[l] += &da;
        d_out = standard(dz.dot(&w.t()));
    }
    Ok((grads, d_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::gradcheck::grad_check;
    use crate::rng::seeded;
    use ndarray::array;

    struct Adj(Vec<Vec<usize>>);
    impl GraphView for Adj {
        fn node_count(&self) -> usize {
            self.0.len()
        }
        fn neighbors_of(&self, node: usize) -> &[usize] {
            &self.0[node]
        }
    }

    fn random_params(rng: &mut impl Rng, dims: &[usize]) -> GatParams {
        GatParams::init(dims, 0.2, rng)
    }

    #[test]
    fn attention_examples() {
        let mut rng = seeded(1);
        let p = random_params(&mut rng, &[2, 3]);
        let same = array![[0.3, -0.2], [0.3, -0.2], [0.3, -0.2]];
        let alpha = gat_attention(array![1.0, 0.0].view(), same.view(), &p, 0).unwrap();
        for v in alpha.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let mut zero_a = p.clone();
        zero_a.attention[0].fill(0.0);
        let varied = array![[1.0, 0.0], [0.0, 5.0]];
        let alpha = gat_attention(array![1.0, 0.0].view(), varied.view(), &zero_a, 0).unwrap();
        assert!((alpha[0] - 0.5).abs() < 1e-15);

        // W = I (1×1), a = (0, 1): logits equal the neighbor value; ln 2 and ln 1 give (2/3, 1/3).
        let hand = GatParams {
            weights: vec![array![[1.0]]],
            attention: vec![array![0.0, 1.0]],
            leaky_slope: 0.2,
        };
        let nbrs = array![[2f64.ln()], [0.0]];
        let alpha = gat_attention(array![0.0].view(), nbrs.view(), &hand, 0).unwrap();
        assert!((alpha[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((alpha[1] - 1.0 / 3.0).abs() < 1e-12);

        let empty = Array2::<f64>::zeros((0, 1));
        assert!(gat_attention(array![0.0].view(), empty.view(), &hand, 0).is_err());
    }

    #[test]
    fn isolated_node_is_self_projection() {
        let mut rng = seeded(3);
        let p = random_params(&mut rng, &[2, 3]);
        let g = Adj(vec![vec![]]);
        let x = array![[0.7, -1.1]];
        let t = gat_forward(&g, &x, &p, Activation::LeakyRelu(0.2)).unwrap();
        let expected = x.dot(&p.weights[0]);
        assert_eq!(t.output(), &expected);
    }

    #[test]
    fn identical_features_give_identical_outputs() {
        let mut rng = seeded(5);
        let p = random_params(&mut rng, &[2, 4, 3]);
        let g = Adj(vec![vec![1, 2], vec![0], vec![0]]);
        let x = Array2::from_elem((3, 2), 0.4);
        let t = gat_forward(&g, &x, &p, Activation::LeakyRelu(0.2)).unwrap();
        for i in 1..3 {
            for (a, b) in t.output().row(0).iter().zip(t.output().row(i).iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn star_matches_dense_reference() {
        let mut rng = seeded(8);
        let p = random_params(&mut rng, &[3, 2]);
        let g = Adj(vec![vec![1, 2], vec![0], vec![0]]);
        let x = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let t = gat_forward(&g, &x, &p, Activation::Identity).unwrap();

        // Dense mask with self loops, masked softmax row by row.
        let mask = array![[1.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        let w = &p.weights[0];
        let a = &p.attention[0];
        let z = x.dot(w);
        let mut out = Array2::<f64>::zeros((3, 2));
        for i in 0..3 {
            let mut e = [0.0; 3];
            let mut total = 0.0;
            for j in 0..3 {
                if mask[[i, j]] == 1.0 {
                    let s =
                        a[0] * z[[i, 0]] + a[1] * z[[i, 1]] + a[2] * z[[j, 0]] + a[3] * z[[j, 1]];
                    let lr = if s > 0.0 { s } else { 0.2 * s };
                    e[j] = lr.exp();
                    total += e[j];
                }
            }
            for j in 0..3 {
                for c in 0..2 {
                    out[[i, c]] += e[j] / total * z[[j, c]];
                }
            }
        }
        for (a, b) in t.output().iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        for row in t.attention(0) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = seeded(100 + seed);
            let g = Adj(vec![vec![1, 3], vec![0, 2], vec![1], vec![0]]);
            let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
            let r = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
            let params = random_params(&mut rng, &[3, 4, 2]);
            let act = Activation::Tanh;
            let loss = |p: &GatParams| -> f64 {
                let t = gat_forward(&g, &x, p, act).unwrap();
                t.output()
                    .iter()
                    .zip(r.iter())
                    .map(|(h, w)| (h * w).sin())
                    .sum()
            };
            let t = gat_forward(&g, &x, &params, act).unwrap();
            let up = Array2::from_shape_fn((4, 2), |(i, j)| {
                r[[i, j]] * (t.output()[[i, j]] * r[[i, j]]).cos()
            });
            let (grads, _) = gat_backward(&t, &params, &up).unwrap();
            let mut probe = params.clone();
            let err = grad_check(
                |flat| {
                    probe.assign_flat(flat);
                    loss(&probe)
                },
                &params.flatten(),
                &grads.flatten(),
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
