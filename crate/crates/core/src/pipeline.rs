//! Configuration and stage orchestration.
//!
//! Every stage reads its inputs from the run directory and writes its outputs
//! back, so a run resumed from any stage produces the same files as a full run.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{link_score, predict, train_decoder, write_predictions, DecoderConfig};
use crate::error::{Error, Result};
use crate::eval::{auc, kfold_classify, lp_protocol, write_sweep_csv, MetricReport, SweepRow};
use crate::graph_builder::{build_graph_over_types, SmoothGraph, SmoothnessReport};
use crate::hetgraph::{load_graph_dir, write_file, GraphView, HeteroGraph};
use crate::io::{read_embeddings, write_embeddings};
use crate::repr::{train_representation, ReprConfig};
use crate::rng::{derive_seed, seeded};
use crate::topo::{train_topology, TopoConfig, TopologyEmbeddings};
use crate::walk::{generate_walks, read_walks, retain_labeled_walks, write_walks, WalkConfig};

pub const WALKS_FILE: &str = "walks.txt";
pub const LABEL_SPLIT_FILE: &str = "label_split.tsv";
pub const TOPO_EMBEDDINGS_FILE: &str = "topo_embeddings.tsv";
pub const TOPO_ENCODER_FILE: &str = "topo_encoder.params";
pub const NEW_GRAPH_DIR: &str = "new_graph";
pub const SMOOTHNESS_FILE: &str = "smoothness.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const REPR_MODEL_FILE: &str = "repr_model.params";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const LINK_PAIRS_FILE: &str = "link_pairs.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWEEP_CSV: &str = "k_sweep.csv";
pub const SWEEP_JSON: &str = "k_sweep.json";

const STAGES: [&str; 7] = ["labels", "link", "walk", "topo", "graph", "repr", "eval"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classify,
    Link,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `nodes.tsv`, `edges.tsv`, `labels.tsv`, `schema.json`.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub relation: String,
    pub ratio: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            relation: String::new(),
            ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: Task,
    pub output_dir: PathBuf,
    /// Share of labeled target nodes (per class) visible to the walk filter.
    /// The remaining labeled nodes form the 5-fold evaluation set.
    pub train_label_fraction: f64,
    /// Worker threads; 0 means all cores. Applied by the command-line tool.
    pub jobs: usize,
    pub data: DataConfig,
    pub walk: WalkConfig,
    pub topo: TopoConfig,
    pub graph: GraphConfig,
    pub repr: ReprConfig,
    pub decoder: DecoderConfig,
    pub link: LinkConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Classify,
            output_dir: PathBuf::from("run"),
            train_label_fraction: 0.2,
            jobs: 0,
            data: DataConfig::default(),
            walk: WalkConfig::default(),
            topo: TopoConfig::default(),
            graph: GraphConfig::default(),
            repr: ReprConfig::default(),
            decoder: DecoderConfig::default(),
            link: LinkConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.apply_seeds();
        Ok(config)
    }

    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.data.dir.is_relative() {
            config.data.dir = base.join(&config.data.dir);
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Seeds every stage from the master seed.
    pub fn apply_seeds(&mut self) {
        self.walk.seed = self.stage_seed("walk");
        self.topo.seed = self.stage_seed("topo");
        self.repr.seed = self.stage_seed("repr");
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        STAGES
            .iter()
            .map(|s| (s.to_string(), self.stage_seed(s)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let tag = |section: &'static str| move |e: Error| Error::Config(format!("[{section}] {e}"));
        self.walk.validate().map_err(tag("walk"))?;
        self.topo.validate().map_err(tag("topo"))?;
        self.repr.validate().map_err(tag("repr"))?;
        self.decoder.validate().map_err(tag("decoder"))?;
        if self.graph.k == 0 {
            return Err(Error::Config("[graph] k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_label_fraction) {
            return Err(Error::Config(format!(
                "train_label_fraction {} is not in [0, 1]",
                self.train_label_fraction
            )));
        }
        if self.data.dir.as_os_str().is_empty() {
            return Err(Error::Config("[data] dir is required".into()));
        }
        if self.task == Task::Link {
            if self.link.relation.is_empty() {
                return Err(Error::Config(
                    "[link] relation is required for task = \"link\"".into(),
                ));
            }
            if !(self.link.ratio > 0.0 && self.link.ratio < 1.0) {
                return Err(Error::Config(format!(
                    "[link] ratio {} is not in (0, 1)",
                    self.link.ratio
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

/// Labeled target nodes split into walk-visible and evaluation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSplit {
    pub train: BTreeMap<usize, usize>,
    pub eval: BTreeMap<usize, usize>,
}

/// Stratified split: `round(fraction · n_c)` nodes of each class go to `train`.
pub fn split_labels(labels: &BTreeMap<usize, usize>, fraction: f64, seed: u64) -> LabelSplit {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&v, &c) in labels {
        by_class.entry(c).or_default().push(v);
    }
    let mut rng = seeded(seed);
    let mut train = BTreeMap::new();
    let mut eval = BTreeMap::new();
    for (c, mut nodes) in by_class {
        nodes.shuffle(&mut rng);
        let take = ((fraction * nodes.len() as f64).round() as usize).min(nodes.len());
        for (i, v) in nodes.into_iter().enumerate() {
            if i < take {
                train.insert(v, c);
            } else {
                eval.insert(v, c);
            }
        }
    }
    LabelSplit { train, eval }
}

fn write_label_split(path: &Path, graph: &HeteroGraph, split: &LabelSplit) -> Result<()> {
    let mut out = String::new();
    let mut rows: Vec<(usize, usize, &str)> =
        split.train.iter().map(|(&v, &c)| (v, c, "train")).collect();
    rows.extend(split.eval.iter().map(|(&v, &c)| (v, c, "eval")));
    rows.sort_unstable();
    for (v, c, role) in rows {
        let _ = writeln!(out, "{}\t{c}\t{role}", graph.node_names()[v]);
    }
    write_file(path, &out)
}

/// Held-out positive pairs and sampled negative pairs.
pub type LinkPairs = (Vec<(usize, usize)>, Vec<(usize, usize)>);

/// The graph the pipeline trains on, with the label split and held-out link pairs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub original: HeteroGraph,
    pub graph: HeteroGraph,
    pub labels: LabelSplit,
    pub link_pairs: Option<LinkPairs>,
    /// Node types spanned by the constructed graph.
    pub graph_types: Vec<usize>,
}

/// Loads the dataset, splits labels and, for the link task, holds out edges.
pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    let original = load_graph_dir(&config.data.dir).map_err(|e| e.in_stage("load"))?;
    let labels = split_labels(
        original.labels(),
        config.train_label_fraction,
        config.stage_seed("labels"),
    );
    match config.task {
        Task::Classify => Ok(Prepared {
            graph: original.clone(),
            graph_types: vec![original.target_type()],
            original,
            labels,
            link_pairs: None,
        }),
        Task::Link => {
            let schema = original.schema();
            let relation = schema
                .relation_index(&config.link.relation)
                .ok_or_else(|| {
                    Error::Config(format!("unknown relation `{}`", config.link.relation))
                        .in_stage("link")
                })?;
            let rel = &schema.relations[relation];
            let mut graph_types: Vec<usize> = [&rel.source, &rel.destination]
                .iter()
                .filter_map(|t| schema.type_index(t))
                .collect();
            graph_types.sort_unstable();
            graph_types.dedup();
            let split = lp_protocol(
                &original,
                relation,
                config.link.ratio,
                config.stage_seed("link"),
            )
            .map_err(|e| e.in_stage("link"))?;
            Ok(Prepared {
                graph: split.train,
                original,
                labels,
                link_pairs: Some((split.positives, split.negatives)),
                graph_types,
            })
        }
    }
}

/// Walk stage: sample biased walks from every node and keep the label-homogeneous ones.
pub fn stage_walk(config: &PipelineConfig, prepared: &Prepared) -> Result<(usize, usize)> {
    let run = || -> Result<(usize, usize)> {
        let dir = &config.output_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let starts: Vec<usize> = (0..prepared.graph.node_count()).collect();
        let walks = generate_walks(&prepared.graph, &starts, &config.walk)?;
        let visible: HashSet<usize> = prepared.labels.train.keys().copied().collect();
        let kept = retain_labeled_walks(&walks, &prepared.labels.train, &visible);
        info!(
            "walks: {} sampled, {} label-homogeneous",
            walks.len(),
            kept.len()
        );
        write_walks(&dir.join(WALKS_FILE), &kept)?;
        write_label_split(
            &dir.join(LABEL_SPLIT_FILE),
            &prepared.graph,
            &prepared.labels,
        )?;
        if let Some((pos, neg)) = &prepared.link_pairs {
            write_link_pairs(&dir.join(LINK_PAIRS_FILE), &prepared.graph, pos, neg)?;
        }
        Ok((walks.len(), kept.len()))
    };
    run().map_err(|e| e.in_stage("walk"))
}

fn write_link_pairs(
    path: &Path,
    graph: &HeteroGraph,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<()> {
    let mut out = String::new();
    let names = graph.node_names();
    for (pairs, tag) in [(pos, 1), (neg, 0)] {
        for &(u, v) in pairs {
            let _ = writeln!(out, "{}\t{}\t{tag}", names[u], names[v]);
        }
    }
    write_file(path, &out)
}

/// Topology stage: fit the encoder on the retained walks.
pub fn stage_topo(config: &PipelineConfig, prepared: &Prepared) -> Result<()> {
    let run = || -> Result<()> {
        let dir = &config.output_dir;
        let walks = read_walks(&dir.join(WALKS_FILE))?;
        let outcome = train_topology(&prepared.graph, &walks, &config.topo, &config.walk)?;
        if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
            info!("topology loss {first:.4} -> {last:.4}");
        }
        outcome
            .embeddings
            .write(&dir.join(TOPO_EMBEDDINGS_FILE), &prepared.graph)?;
        outcome.encoder.save(&dir.join(TOPO_ENCODER_FILE))
    };
    run().map_err(|e| e.in_stage("topo"))
}

/// Graph stage: top-k graph over the chosen node types.
pub fn stage_graph(
    config: &PipelineConfig,
    prepared: &Prepared,
    k: usize,
    out: &Path,
) -> Result<SmoothnessReport> {
    let run = || -> Result<SmoothnessReport> {
        let topo = TopologyEmbeddings::read(
            &config.output_dir.join(TOPO_EMBEDDINGS_FILE),
            &prepared.graph,
        )?;
        let (built, report) = build_graph_over_types(
            &topo,
            &prepared.graph,
            &prepared.graph_types,
            k,
            config.stage_seed("graph"),
        )?;
        built.write_dir(&out.join(NEW_GRAPH_DIR))?;
        write_file(
            &out.join(SMOOTHNESS_FILE),
            &(serde_json::to_string_pretty(&report)? + "\n"),
        )?;
        info!(
            "graph: {} nodes, k = {}, smoothness {:.4} (random {:.4})",
            report.nodes, report.k_used, report.built_smoothness, report.random_smoothness
        );
        Ok(report)
    };
    run().map_err(|e| e.in_stage("graph"))
}

/// Representation stage: distillation training on the constructed graph.
pub fn stage_repr(config: &PipelineConfig, out: &Path) -> Result<()> {
    let run = || -> Result<()> {
        let graph = SmoothGraph::load_dir(&out.join(NEW_GRAPH_DIR))?;
        let outcome = train_representation(&graph, &config.repr)?;
        if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
            info!("representation loss {first:.4} -> {last:.4}");
        }
        write_embeddings(
            &out.join(EMBEDDINGS_FILE),
            graph.names(),
            &outcome.embeddings,
        )?;
        outcome.model.save(&out.join(REPR_MODEL_FILE))
    };
    run().map_err(|e| e.in_stage("repr"))
}

/// Final embeddings keyed by global node id.
pub fn read_node_embeddings(path: &Path, graph: &HeteroGraph) -> Result<(Vec<usize>, Array2<f64>)> {
    let (names, matrix) = read_embeddings(path)?;
    let index = graph.name_index();
    let ids = names
        .iter()
        .map(|n| {
            index
                .get(n.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("embedding for unknown node `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, matrix))
}

/// Classification report over `labels` (global ids) given embeddings of `ids`.
pub fn classify_report(
    ids: &[usize],
    embeddings: &Array2<f64>,
    labels: &BTreeMap<usize, usize>,
    classes: usize,
    decoder: &DecoderConfig,
    seed: u64,
) -> Result<MetricReport> {
    let row: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut labeled = BTreeMap::new();
    for (v, &c) in labels {
        let r = row
            .get(v)
            .ok_or_else(|| Error::InvalidInput(format!("labeled node {v} has no embedding")))?;
        labeled.insert(*r, c);
    }
    kfold_classify(embeddings, &labeled, classes, decoder, seed)
}

/// AUC of `σ(h_u · h_v)` over held-out positives and sampled negatives.
pub fn link_report(
    ids: &[usize],
    embeddings: &Array2<f64>,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Result<MetricReport> {
    let row: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let lookup = |v: usize| {
        row.get(&v)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("link endpoint {v} has no embedding")))
    };
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for (pairs, label) in [(positives, true), (negatives, false)] {
        for &(u, v) in pairs {
            scores.push(link_score(
                embeddings.row(lookup(u)?),
                embeddings.row(lookup(v)?),
            )?);
            truth.push(label);
        }
    }
    Ok(MetricReport::link(auc(&scores, &truth)?))
}

/// Evaluation stage: 5-fold classification or link AUC.
pub fn stage_eval(
    config: &PipelineConfig,
    prepared: &Prepared,
    out: &Path,
) -> Result<MetricReport> {
    let run = || -> Result<MetricReport> {
        let graph = &prepared.graph;
        let (ids, h) = read_node_embeddings(&out.join(EMBEDDINGS_FILE), graph)?;
        let seed = config.stage_seed("eval");
        let report = match &prepared.link_pairs {
            None => {
                let classes = graph.num_classes();
                let report = classify_report(
                    &ids,
                    &h,
                    &prepared.labels.eval,
                    classes,
                    &config.decoder,
                    seed,
                )?;
                if !prepared.labels.train.is_empty() {
                    let row: HashMap<usize, usize> =
                        ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
                    let train: Vec<(usize, usize)> = prepared
                        .labels
                        .train
                        .iter()
                        .filter_map(|(v, &c)| row.get(v).map(|&r| (r, c)))
                        .collect();
                    let state = train_decoder(&h, &train, classes, &config.decoder, seed)?.state;
                    let preds = predict(&h, &state, config.decoder.use_prompt)?;
                    let names: Vec<String> =
                        ids.iter().map(|&v| graph.node_names()[v].clone()).collect();
                    write_predictions(&out.join(PREDICTIONS_FILE), &names, &preds)?;
                }
                report
            }
            Some((pos, neg)) => link_report(&ids, &h, pos, neg)?,
        };
        report.write_json(&out.join(REPORT_JSON))?;
        report.write_csv(&out.join(REPORT_CSV))?;
        Ok(report)
    };
    run().map_err(|e| e.in_stage("eval"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub walks_sampled: usize,
    pub walks_retained: usize,
    /// SHA-256 of every artifact, keyed by path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
}

pub fn hash_artifacts(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path
                    .strip_prefix(dir)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, hex::encode(Sha256::digest(&bytes)));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: MetricReport,
    pub smoothness: SmoothnessReport,
    pub manifest: Manifest,
}

/// Runs every stage in order and writes the manifest.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1e3);
        clock = Instant::now();
    };

    let prepared = prepare(config)?;
    lap("load", &mut timings);
    let (walks_sampled, walks_retained) = stage_walk(config, &prepared)?;
    lap("walk", &mut timings);
    stage_topo(config, &prepared)?;
    lap("topo", &mut timings);
    let smoothness = stage_graph(config, &prepared, config.graph.k, out)?;
    lap("graph", &mut timings);
    stage_repr(config, out)?;
    lap("repr", &mut timings);
    let report = stage_eval(config, &prepared, out)?;
    lap("eval", &mut timings);

    write_file(&out.join("config.toml"), &config.to_toml()?)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash()?,
        master_seed: config.seed,
        seeds: config.stage_seeds(),
        walks_sampled,
        walks_retained,
        artifacts: hash_artifacts(out)?,
        timings_ms: timings,
    };
    write_file(
        &out.join(MANIFEST_FILE),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(RunSummary {
        report,
        smoothness,
        manifest,
    })
}

/// Stage one once, then graph construction, representation learning and
/// evaluation for each `k`. Per-k artifacts go to `k_<k>/` under the run directory.
pub fn k_sweep(config: &PipelineConfig, ks: &[usize]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(
            "k grid must be non-empty and positive".into(),
        ));
    }
    let prepared = prepare(config)?;
    stage_walk(config, &prepared)?;
    stage_topo(config, &prepared)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let cell = config.output_dir.join(format!("k_{k}"));
        fs::create_dir_all(&cell).map_err(|e| Error::io(&cell, e))?;
        stage_graph(config, &prepared, k, &cell)?;
        stage_repr(config, &cell)?;
        let report = stage_eval(config, &prepared, &cell)?;
        rows.push(SweepRow { k, report });
    }
    write_sweep_csv(&config.output_dir.join(SWEEP_CSV), &rows)?;
    write_file(
        &config.output_dir.join(SWEEP_JSON),
        &(serde_json::to_string_pretty(&rows)? + "\n"),
    )?;
    Ok(rows)
}

/// Reference encoder: the same distillation objective on the raw graph
/// (all nodes, raw features), evaluated on the target rows.
pub fn raw_graph_baseline(
    graph: &HeteroGraph,
    repr: &ReprConfig,
    eval_labels: &BTreeMap<usize, usize>,
    decoder: &DecoderConfig,
    eval_seed: u64,
) -> Result<MetricReport> {
    let raw = SmoothGraph::from_hetero(graph);
    let outcome = train_representation(&raw, repr)?;
    classify_report(
        raw.node_ids(),
        &outcome.embeddings,
        eval_labels,
        graph.num_classes(),
        decoder,
        eval_seed,
    )
}
