//! Downstream heads: a prompt-prefixed linear classifier and a dot-product link scorer.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{sigmoid, Adam, Parameters};
use crate::hetgraph::write_file;
use crate::rng::seeded;

const MAX_EPOCHS: usize = 500;
const PLATEAU_WINDOW: usize = 20;
const PLATEAU_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub prompt_dim: usize,
    pub use_prompt: bool,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            prompt_dim: 8,
            use_prompt: true,
            epochs: MAX_EPOCHS,
            learning_rate: 1e-2,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return Err(Error::Config(format!(
                "decoder epochs must be in 1..={MAX_EPOCHS}"
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "decoder learning_rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Prompt vector `β` and the linear head `θ` over `[β ‖ h]`.
///
/// Rows `0..d_p` of `theta_weight` act on the prompt, the remaining `d` rows on `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    pub beta: Array1<f64>,
    pub theta_weight: Array2<f64>,
    pub theta_bias: Array1<f64>,
}

impl PromptState {
    /// Uniform init. The `h` block is drawn first with a width that ignores `d_p`,
    /// so it is identical for every prompt size under the same seed.
    pub fn init<R: Rng + ?Sized>(
        prompt_dim: usize,
        embed_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let bound_h = 1.0 / (embed_dim.max(1) as f64).sqrt();
        let h_block = Array2::from_shape_fn((embed_dim, classes), |_| {
            rng.random_range(-bound_h..=bound_h)
        });
        let bound_p = 1.0 / (prompt_dim.max(1) as f64).sqrt();
        let p_block = Array2::from_shape_fn((prompt_dim, classes), |_| {
            rng.random_range(-bound_p..=bound_p)
        });
        let beta = Array1::from_shape_fn(prompt_dim, |_| rng.random_range(-1.0..=1.0));
        let theta_weight = ndarray::concatenate(Axis(0), &[p_block.view(), h_block.view()])
            .expect("matching class width");
        Self {
            beta,
            theta_weight,
            theta_bias: Array1::zeros(classes),
        }
    }

    pub fn prompt_dim(&self) -> usize {
        self.beta.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.theta_weight.nrows() - self.beta.len()
    }

    pub fn classes(&self) -> usize {
        self.theta_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_weight.nrows() < self.beta.len()
            || self.theta_weight.ncols() != self.theta_bias.len()
        {
            return Err(Error::Shape(format!(
                "prompt {} with theta {:?} and bias {}",
                self.beta.len(),
                self.theta_weight.dim(),
                self.theta_bias.len()
            )));
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("decoder state".into()));
        }
        Ok(())
    }

    fn blocks(&self) -> (ndarray::ArrayView2<'_, f64>, ndarray::ArrayView2<'_, f64>) {
        self.theta_weight.view().split_at(Axis(0), self.beta.len())
    }
}

impl Parameters for PromptState {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.beta.as_slice().expect("standard layout"),
            self.theta_weight.as_slice().expect("standard layout"),
            self.theta_bias.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.beta.as_slice_mut().expect("standard layout"),
            self.theta_weight.as_slice_mut().expect("standard layout"),
            self.theta_bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// `θ_weightᵀ [β ‖ h] + θ_bias`.
pub fn prompt_forward(h: ArrayView1<f64>, state: &PromptState) -> Result<Array1<f64>> {
    if h.len() != state.embed_dim() {
        return Err(Error::Shape(format!(
            "embedding width {} but decoder expects {}",
            h.len(),
            state.embed_dim()
        )));
    }
    let (wp, wh) = state.blocks();
    Ok(wp.t().dot(&state.beta) + wh.t().dot(&h) + &state.theta_bias)
}

/// Logits for every row; `use_prompt = false` drops the prompt term.
pub fn batch_logits(
    embeddings: &Array2<f64>,
    state: &PromptState,
    use_prompt: bool,
) -> Result<Array2<f64>> {
    if embeddings.ncols() != state.embed_dim() {
        return Err(Error::Shape(format!(
            "embedding width {} but decoder expects {}",
            embeddings.ncols(),
            state.embed_dim()
        )));
    }
    let (wp, wh) = state.blocks();
    let mut shift = state.theta_bias.clone();
    if use_prompt {
        shift = shift + wp.t().dot(&state.beta);
    }
    Ok(embeddings.dot(&wh) + &shift.insert_axis(Axis(0)))
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// First index of the maximum.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over `(row, class)` pairs and its gradient.
pub fn cross_entropy(
    embeddings: &Array2<f64>,
    train: &[(usize, usize)],
    state: &PromptState,
    use_prompt: bool,
) -> Result<(f64, PromptState)> {
    if train.is_empty() {
        return Err(Error::InvalidInput("no training labels".into()));
    }
    let rows: Vec<usize> = train.iter().map(|&(r, _)| r).collect();
    if let Some(&bad) = rows.iter().find(|&&r| r >= embeddings.nrows()) {
        return Err(Error::InvalidNode(bad));
    }
    if let Some(&(_, c)) = train.iter().find(|&&(_, c)| c >= state.classes()) {
        return Err(Error::InvalidInput(format!(
            "class {c} outside decoder range"
        )));
    }
    let x = embeddings.select(Axis(0), &rows);
    let logits = batch_logits(&x, state, use_prompt)?;
    let n = train.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Array2::<f64>::zeros(logits.dim());
    for (i, &(_, c)) in train.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[c];
        let mut g = softmax(row);
        g[c] -= 1.0;
        dlogits.row_mut(i).assign(&(g / n));
    }
    loss /= n;

    let (wp, _) = state.blocks();
    let col_sum = dlogits.sum_axis(Axis(0));
    let mut grads = state.zeros_like();
    let dp = state.prompt_dim();
    grads
        .theta_weight
        .slice_mut(ndarray::s![dp.., ..])
        .assign(&x.t().dot(&dlogits));
    if use_prompt {
        for (r, &b) in state.beta.iter().enumerate() {
            grads.theta_weight.row_mut(r).scaled_add(b, &col_sum);
        }
        grads.beta = wp.dot(&col_sum);
    }
    grads.theta_bias = col_sum;
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct DecoderOutcome {
    pub state: PromptState,
    pub losses: Vec<f64>,
}

/// Full-batch Adam on the cross-entropy, stopping early on a loss plateau.
///
/// With `use_prompt = false` neither `β` nor the prompt block of `θ` change.
pub fn train_decoder(
    embeddings: &Array2<f64>,
    train: &[(usize, usize)],
    classes: usize,
    config: &DecoderConfig,
    seed: u64,
) -> Result<DecoderOutcome> {
    config.validate()?;
    let mut present = vec![false; classes];
    for &(_, c) in train {
        if c < classes {
            present[c] = true;
        }
    }
    for (c, seen) in present.iter().enumerate() {
        if !seen {
            warn!("class {c} has no training example");
        }
    }
    let mut state = PromptState::init(
        config.prompt_dim,
        embeddings.ncols(),
        classes,
        &mut seeded(seed),
    );
    let mut adam = Adam::new(config.learning_rate);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = cross_entropy(embeddings, train, &state, config.use_prompt)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("decoder epoch {epoch}")));
        }
        losses.push(loss);
        if losses.len() > PLATEAU_WINDOW {
            let past = losses[losses.len() - 1 - PLATEAU_WINDOW];
            if (past - loss).abs() <= PLATEAU_TOLERANCE * past.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        adam.step(&mut state, &grads);
    }
    Ok(DecoderOutcome { state, losses })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Array1<f64>,
    pub probabilities: Array1<f64>,
    pub class: usize,
}

pub fn predict(
    embeddings: &Array2<f64>,
    state: &PromptState,
    use_prompt: bool,
) -> Result<Vec<Prediction>> {
    let logits = batch_logits(embeddings, state, use_prompt)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| Prediction {
            logits: row.to_owned(),
            probabilities: softmax(row),
            class: argmax(row),
        })
        .collect())
}

/// `<node_id>\t<class>\t<p_1,...,p_C>` per row.
pub fn write_predictions(path: &Path, names: &[String], predictions: &[Prediction]) -> Result<()> {
    if names.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} names for {} predictions",
            names.len(),
            predictions.len()
        )));
    }
    let mut out = String::new();
    for (name, p) in names.iter().zip(predictions) {
        let probs: Vec<String> = p.probabilities.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{name}\t{}\t{}", p.class, probs.join(","));
    }
    write_file(path, &out)
}

/// `σ(h_u · h_v)`.
pub fn link_score(h_u: ArrayView1<f64>, h_v: ArrayView1<f64>) -> Result<f64> {
    if h_u.len() != h_v.len() {
        return Err(Error::Shape(format!(
            "link embeddings of width {} and {}",
            h_u.len(),
            h_v.len()
        )));
    }
    Ok(sigmoid(h_u.dot(&h_v)))
}
