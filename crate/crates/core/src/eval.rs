//! Evaluation protocols and metrics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{predict, train_decoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::hetgraph::{write_file, Edge, HeteroGraph};
use crate::rng::{derive_seed, seeded};

pub const FOLDS: usize = 5;

/// Five disjoint folds covering the evaluation nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldSplit {
    /// Shuffles `nodes`, then deals them round-robin so fold sizes differ by at most one.
    pub fn new(nodes: &[usize], seed: u64) -> Result<Self> {
        if nodes.len() < FOLDS {
            return Err(Error::InvalidInput(format!(
                "{} labeled nodes; need at least {FOLDS}",
                nodes.len()
            )));
        }
        let mut order = nodes.to_vec();
        order.sort_unstable();
        order.shuffle(&mut seeded(seed));
        let mut folds = vec![Vec::new(); FOLDS];
        for (i, v) in order.into_iter().enumerate() {
            folds[i % FOLDS].push(v);
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(Self { folds, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub folds: Vec<FoldMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_f1: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub micro_f1: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
}

impl MetricReport {
    pub fn link(auc: f64) -> Self {
        Self {
            task: "link".into(),
            folds: Vec::new(),
            macro_f1: None,
            micro_f1: None,
            auc: Some(auc),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_file(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row per fold, or a single AUC row for the link task.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        if let Some(auc) = self.auc {
            out.push_str("task,auc\n");
            let _ = writeln!(out, "{},{auc}", self.task);
        } else {
            out.push_str("fold,train_size,test_size,macro_f1,micro_f1\n");
            for f in &self.folds {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    f.fold, f.train_size, f.test_size, f.macro_f1, f.micro_f1
                );
            }
        }
        write_file(path, &out)
    }
}

fn check_lengths(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels".into()));
    }
    Ok(())
}

/// Macro F1 over classes `0..=max(preds ∪ labels)`.
pub fn macro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let classes = preds.iter().chain(labels).max().map_or(0, |m| m + 1);
    macro_f1_with_classes(preds, labels, classes)
}

/// Unweighted mean of per-class F1; undefined class F1 counts as 0.
pub fn macro_f1_with_classes(preds: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    check_lengths(preds, labels)?;
    if let Some(&c) = preds.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::InvalidInput(format!(
            "class {c} outside 0..{classes}"
        )));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / classes as f64)
}

/// Global-count F1; equals accuracy for single-label multiclass.
pub fn micro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let tp = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let wrong = preds.len() - tp;
    // Each wrong prediction is one false positive and one false negative.
    Ok(2.0 * tp as f64 / (2 * tp + 2 * wrong) as f64)
}

/// Probability a random positive outranks a random negative (ties count 1/2), via mid-ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(
            "AUC needs both positive and negative examples".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// 5-fold protocol: train the decoder on one fold, test on the other four, rotate.
///
/// `labeled` maps embedding rows to classes.
pub fn kfold_classify(
    embeddings: &Array2<f64>,
    labeled: &BTreeMap<usize, usize>,
    classes: usize,
    decoder: &DecoderConfig,
    seed: u64,
) -> Result<MetricReport> {
    let nodes: Vec<usize> = labeled.keys().copied().collect();
    if let Some(&bad) = nodes.iter().find(|&&r| r >= embeddings.nrows()) {
        return Err(Error::InvalidNode(bad));
    }
    let split = FoldSplit::new(&nodes, derive_seed(seed, "folds"))?;
    let folds: Vec<FoldMetrics> = (0..FOLDS)
        .into_par_iter()
        .map(|f| {
            let train: Vec<(usize, usize)> =
                split.folds[f].iter().map(|&v| (v, labeled[&v])).collect();
            let test: Vec<usize> = (0..FOLDS)
                .filter(|&g| g != f)
                .flat_map(|g| split.folds[g].clone())
                .collect();
            let outcome = train_decoder(
                embeddings,
                &train,
                classes,
                decoder,
                derive_seed(seed, &format!("decoder-{f}")),
            )?;
            let x = embeddings.select(ndarray::Axis(0), &test);
            let preds: Vec<usize> = predict(&x, &outcome.state, decoder.use_prompt)?
                .iter()
                .map(|p| p.class)
                .collect();
            let truth: Vec<usize> = test.iter().map(|v| labeled[v]).collect();
            Ok(FoldMetrics {
                fold: f,
                train_size: train.len(),
                test_size: test.len(),
                macro_f1: macro_f1_with_classes(&preds, &truth, classes)?,
                micro_f1: micro_f1(&preds, &truth)?,
            })
        })
        .collect::<Result<_>>()?;
    let macro_values: Vec<f64> = folds.iter().map(|f| f.macro_f1).collect();
    let micro_values: Vec<f64> = folds.iter().map(|f| f.micro_f1).collect();
    Ok(MetricReport {
        task: "classify".into(),
        macro_f1: Summary::of(&macro_values),
        micro_f1: Summary::of(&micro_values),
        folds,
        auc: None,
    })
}

/// Held-out edges of one relation plus sampled non-edges.
#[derive(Debug, Clone)]
pub struct LinkSplit {
    pub train: HeteroGraph,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

fn unordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Removes `⌊ratio·m⌋` of the `m` distinct node pairs linked by `relation`.
///
/// Every edge joining a removed pair is dropped, whatever its relation or
/// direction, so the training graph never sees a test positive. Negatives are
/// uniformly sampled pairs with the relation's endpoint types that are not
/// linked in the original graph.
pub fn lp_protocol(
    graph: &HeteroGraph,
    relation: usize,
    ratio: f64,
    seed: u64,
) -> Result<LinkSplit> {
    let rel = graph
        .schema()
        .relations
        .get(relation)
        .ok_or_else(|| Error::InvalidInput(format!("unknown relation {relation}")))?;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!("removal ratio {ratio}")));
    }
    let pairs: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter(|e| e.relation == relation)
        .map(|e| (e.src, e.dst))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect::<Vec<_>>();
    // Mirrors of the same undirected pair count once.
    let mut seen = HashSet::new();
    let pairs: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(a, b)| seen.insert(unordered(a, b)))
        .collect();
    if pairs.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "relation `{}` has {} edges; need at least 5",
            rel.name,
            pairs.len()
        )));
    }
    let count = (ratio * pairs.len() as f64).floor() as usize;
    let mut rng = seeded(seed);
    let mut positives: Vec<(usize, usize)> =
        pairs.choose_multiple(&mut rng, count).copied().collect();
    positives.sort_unstable();
    let removed: HashSet<(usize, usize)> =
        positives.iter().map(|&(a, b)| unordered(a, b)).collect();
    let kept: Vec<Edge> = graph
        .edges()
        .iter()
        .filter(|e| !removed.contains(&unordered(e.src, e.dst)))
        .copied()
        .collect();
    let train = graph.with_edges(kept)?;

    let src_type = graph
        .schema()
        .type_index(&rel.source)
        .ok_or_else(|| Error::Schema(rel.source.clone()))?;
    let dst_type = graph
        .schema()
        .type_index(&rel.destination)
        .ok_or_else(|| Error::Schema(rel.destination.clone()))?;
    let sources = graph.nodes_of_types(&[src_type]);
    let targets = graph.nodes_of_types(&[dst_type]);
    let linked: HashSet<(usize, usize)> = graph
        .edges()
        .iter()
        .map(|e| unordered(e.src, e.dst))
        .collect();
    let mut candidates = Vec::new();
    for &u in &sources {
        for &v in &targets {
            if u != v && !linked.contains(&unordered(u, v)) {
                candidates.push((u, v));
            }
        }
    }
    let mut distinct = HashSet::new();
    candidates.retain(|&(u, v)| distinct.insert(unordered(u, v)));
    if candidates.len() < count {
        return Err(Error::Graph(format!(
            "only {} unlinked pairs available for {count} negatives",
            candidates.len()
        )));
    }
    let mut negatives: Vec<(usize, usize)> = candidates
        .choose_multiple(&mut rng, count)
        .copied()
        .collect();
    negatives.sort_unstable();
    Ok(LinkSplit {
        train,
        positives,
        negatives,
    })
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette(embeddings: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidInput(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let dist = |i: usize, j: usize| {
        (&embeddings.row(i) - &embeddings.row(j))
            .mapv(|v| v * v)
            .sum()
            .sqrt()
    };
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for (j, &label) in labels.iter().enumerate() {
                if j != i {
                    let e = sums.entry(label).or_insert((0.0, 0));
                    e.0 += dist(i, j);
                    e.1 += 1;
                }
            }
            let own = sums.get(&labels[i]).copied().unwrap_or((0.0, 0));
            if own.1 == 0 {
                return 0.0;
            }
            let a = own.0 / own.1 as f64;
            let b = sums
                .iter()
                .filter(|(c, _)| **c != labels[i])
                .map(|(_, (s, k))| s / *k as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// One row of a k-sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub report: MetricReport,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("k,macro_f1_mean,macro_f1_std,micro_f1_mean,micro_f1_std,auc\n");
    let cell = |s: Option<Summary>| {
        s.map_or((String::new(), String::new()), |s| {
            (s.mean.to_string(), s.std.to_string())
        })
    };
    for row in rows {
        let (ma, ms) = cell(row.report.macro_f1);
        let (mi, mis) = cell(row.report.micro_f1);
        let auc = row.report.auc.map_or(String::new(), |a| a.to_string());
        let _ = writeln!(out, "{},{ma},{ms},{mi},{mis},{auc}", row.k);
    }
    write_file(path, &out)
}
