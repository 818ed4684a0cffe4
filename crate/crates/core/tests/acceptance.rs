//! Acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p togrl-core --test acceptance`. Every check uses an
//! oracle written here, independent of the library code paths it checks.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use togrl_core::decoder::{cross_entropy, predict, train_decoder, DecoderConfig, PromptState};
use togrl_core::eval::{auc, lp_protocol, macro_f1, macro_f1_with_classes, micro_f1};
use togrl_core::gnn::{grad_check, Backbone, Encoder, Parameters};
use togrl_core::graph_builder::{
    column_smoothness, degree_matched_random, smoothness, topk_graph, GraphLaplacian, SmoothGraph,
};
use togrl_core::hetgraph::{Edge, GraphView, HeteroGraph, RelationType, Schema};
use togrl_core::pipeline::{
    prepare, raw_graph_baseline, read_node_embeddings, run_pipeline, PipelineConfig,
    EMBEDDINGS_FILE,
};
use togrl_core::repr::{
    distillation_loss, jsd_loss_grad, jsd_mi, subgraphs, ReprModel, StepSamples,
};
use togrl_core::rng::seeded;
use togrl_core::synth::{gen_synthetic, AuxType, SyntheticSpec};
use togrl_core::topo::{skipgram_loss, NegativeSet};
use togrl_core::walk::{
    generate_walks, retain_labeled_walks, ContextPair, Walk, WalkConfig, WalkSampler,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

struct Adj(Vec<Vec<usize>>);

impl Adj {
    fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Adj(adj)
    }
}

impl GraphView for Adj {
    fn node_count(&self) -> usize {
        self.0.len()
    }

    fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.0[node]
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    // A path keeps every node attached.
    for a in 1..n {
        if !edges.iter().any(|&(x, y)| x == a || y == a) {
            edges.push((a - 1, a));
        }
    }
    edges
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- criterion 1

fn walk_kernel() -> Outcome {
    let edges = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)];
    let n = 5;
    let linked: HashSet<(usize, usize)> =
        edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    let graph = Adj::from_edges(n, &edges);
    let samples = 100_000;
    let mut worst = 0.0f64;
    let mut transitions = 0;
    for (p, q) in [(1.0, 1.0), (0.5, 2.0), (4.0, 0.25)] {
        let config = WalkConfig {
            p,
            q,
            ..Default::default()
        };
        for sampler in [
            WalkSampler::new(&graph, &config),
            WalkSampler::on_the_fly(&graph, &config),
        ] {
            let mut rng = seeded(17);
            for &(t, v) in linked.iter().collect::<BTreeSet<_>>() {
                let candidates: Vec<usize> = (0..n).filter(|&x| linked.contains(&(v, x))).collect();
                let raw: Vec<f64> = candidates
                    .iter()
                    .map(|&x| {
                        if x == t {
                            1.0 / p
                        } else if linked.contains(&(t, x)) {
                            1.0
                        } else {
                            1.0 / q
                        }
                    })
                    .collect();
                let z: f64 = raw.iter().sum();
                let mut counts = HashMap::new();
                for _ in 0..samples {
                    let next = sampler
                        .step(Some(t), v, &mut rng)
                        .ok_or("dead end on a connected node")?;
                    *counts.entry(next).or_insert(0usize) += 1;
                }
                ensure(counts.keys().all(|x| candidates.contains(x)), || {
                    format!("step from {v} reached a non-neighbor")
                })?;
                for (x, w) in candidates.iter().zip(&raw) {
                    let freq = *counts.get(x).unwrap_or(&0) as f64 / samples as f64;
                    let dev = (freq - w / z).abs();
                    worst = worst.max(dev);
                    transitions += 1;
                    ensure(dev <= 0.01, || {
                        format!(
                            "p={p} q={q} ({t}->{v}->{x}): freq {freq:.4} vs {:.4}",
                            w / z
                        )
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{transitions} transitions, max |freq - prob| = {worst:.4}"
    ))
}

// ---------------------------------------------------------------- criterion 2

fn gradient_suite() -> Outcome {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, e: f64| -> Result<(), String> {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
        ensure(e < GRAD_TOL, || format!("{name}: relative error {e:.3e}"))
    };
    for seed in 0..5u64 {
        let mut rng = seeded(1000 + seed);

        // Skip-gram.
        let n = 7;
        let emb = random_matrix(n, 5, &mut rng);
        let positives: Vec<ContextPair> = (0..8)
            .map(|_| {
                let center = rng.random_range(0..n);
                let context = (center + rng.random_range(1..n)) % n;
                ContextPair { center, context }
            })
            .collect();
        let negatives: Vec<NegativeSet> = positives
            .iter()
            .map(|p| NegativeSet {
                center: p.center,
                negatives: (0..3).map(|_| rng.random_range(0..n)).collect(),
            })
            .collect();
        let (_, g) = skipgram_loss(&emb, &positives, &negatives).map_err(err)?;
        let flat: Vec<f64> = emb.iter().copied().collect();
        let e = grad_check(
            |x| {
                let m = Array2::from_shape_vec(emb.dim(), x.to_vec()).unwrap();
                skipgram_loss(&m, &positives, &negatives).unwrap().0
            },
            &flat,
            g.as_slice().unwrap(),
            FD_STEP,
        )
        .map_err(err)?;
        record("skipgram", e)?;

        // GCN and GAT encoders under a random linear read-out.
        let n = rng.random_range(5..=8);
        let graph = Adj::from_edges(n, &random_graph(n, 0.35, &mut rng));
        let x = random_matrix(n, 4, &mut rng);
        for (name, backbone) in [("gcn", Backbone::Gcn), ("gat", Backbone::Gat)] {
            let enc = Encoder::init(backbone, &[4, 6, 3], &mut rng);
            let readout = random_matrix(n, 3, &mut rng);
            let trace = enc.forward(&graph, &x).map_err(err)?;
            let grads = enc.backward(&trace, &readout).map_err(err)?;
            let e = grad_check(
                |flat| {
                    let mut probe = enc.clone();
                    probe.assign_flat(flat);
                    let out = probe.forward(&graph, &x).unwrap();
                    (out.output() * &readout).sum()
                },
                &enc.flatten(),
                &grads.flatten(),
                FD_STEP,
            )
            .map_err(err)?;
            record(name, e)?;
        }

        // JSD estimator on raw scores.
        let pos: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let neg: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (gp, gn) = jsd_loss_grad(&pos, &neg);
        let scores: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        let analytic: Vec<f64> = gp.into_iter().chain(gn).collect();
        let e = grad_check(
            |s| -jsd_mi(&s[..pos.len()], &s[pos.len()..]).unwrap(),
            &scores,
            &analytic,
            FD_STEP,
        )
        .map_err(err)?;
        record("jsd", e)?;

        // Full distillation objective through the per-node encoders.
        let n = rng.random_range(5..=8);
        let edges = random_graph(n, 0.4, &mut rng);
        let features = random_matrix(n, 4, &mut rng);
        let smooth = SmoothGraph::new(
            (0..n).collect(),
            (0..n).map(|i| i.to_string()).collect(),
            edges,
            features.clone(),
        )
        .map_err(err)?;
        let subs = subgraphs(&smooth).map_err(err)?;
        let model = ReprModel::init(&[4, 5, 3], &mut rng);
        let samples = StepSamples::draw(&features, 2, &mut rng).map_err(err)?;
        let (_, grads) = distillation_loss(&model, &subs, &features, &samples).map_err(err)?;
        let e = grad_check(
            |flat| {
                let mut probe = model.clone();
                probe.assign_flat(flat);
                distillation_loss(&probe, &subs, &features, &samples)
                    .unwrap()
                    .0
            },
            &model.flatten(),
            &grads.flatten(),
            FD_STEP,
        )
        .map_err(err)?;
        record("distillation", e)?;

        // Prompt decoder cross-entropy, with and without the prompt.
        let emb = random_matrix(8, 5, &mut rng);
        let train: Vec<(usize, usize)> = (0..8).map(|i| (i, rng.random_range(0..3))).collect();
        let state = PromptState::init(3, 5, 3, &mut rng);
        for (name, use_prompt) in [("prompt_ce", true), ("plain_ce", false)] {
            let (_, grads) = cross_entropy(&emb, &train, &state, use_prompt).map_err(err)?;
            let e = grad_check(
                |flat| {
                    let mut probe = state.clone();
                    probe.assign_flat(flat);
                    cross_entropy(&emb, &train, &probe, use_prompt).unwrap().0
                },
                &state.flatten(),
                &grads.flatten(),
                FD_STEP,
            )
            .map_err(err)?;
            record(name, e)?;
        }
    }
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Ok(format!("max relative error: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- criterion 3

fn smoothness_equivalence() -> Outcome {
    let mut rng = seeded(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=50);
        let density = rng.random_range(0.05..0.6);
        let mut w = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < density {
                    let v = rng.random_range(0.0..3.0);
                    w[[i, j]] = v;
                    w[[j, i]] = v;
                }
            }
        }
        let y: Array1<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut oracle = 0.0;
        for i in 0..n {
            for j in 0..n {
                oracle += w[[i, j]] * (y[i] - y[j]).powi(2);
            }
        }
        oracle *= 0.5;
        let lap = GraphLaplacian::from_weights(w).map_err(err)?;
        let got = smoothness(&lap, y.view()).map_err(err)?;
        let dev = (got - oracle).abs() / oracle.abs().max(1.0);
        worst = worst.max(dev);
        ensure(dev <= 1e-9, || {
            format!("n={n}: yLy {got} vs edge sum {oracle}")
        })?;
    }
    Ok(format!("50 graphs, max relative deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 4

fn knn_invariants() -> Outcome {
    let mut rng = seeded(4);
    let mut checked = 0usize;
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        let dim = rng.random_range(1..=4);
        // Small integer coordinates make exact distance ties common.
        let emb = Array2::from_shape_fn((n, dim), |_| rng.random_range(0..4) as f64);
        let mut node_ids: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        node_ids.shuffle(&mut rng);
        let k = rng.random_range(1..=n + 2);
        let graph = topk_graph(&emb, &node_ids, k).map_err(err)?;
        let expect = k.min(n - 1);
        let mut kept: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(a, b) in graph.edges() {
            ensure(a != b, || format!("case {case}: self-loop at {a}"))?;
            ensure(kept[a].insert(b), || {
                format!("case {case}: duplicate edge {a}->{b}")
            })?;
        }
        let sq = |a: usize, b: usize| -> f64 {
            (0..dim).map(|c| (emb[[a, c]] - emb[[b, c]]).powi(2)).sum()
        };
        for (i, kept_i) in kept.iter().enumerate() {
            ensure(kept_i.len() == expect, || {
                format!(
                    "case {case}: node {i} out-degree {} != {expect}",
                    kept_i.len()
                )
            })?;
            let key = |j: usize| (sq(i, j), node_ids[j]);
            for &j in kept_i {
                for l in (0..n).filter(|&l| l != i && !kept_i.contains(&l)) {
                    let (a, b) = (key(j), key(l));
                    checked += 1;
                    ensure(a.0 < b.0 || (a.0 == b.0 && a.1 < b.1), || {
                        format!(
                            "case {case}: kept {j} {a:?} ranks after dropped {l} {b:?} from {i}"
                        )
                    })?;
                }
            }
        }
    }
    Ok(format!("100 sets, {checked} kept/dropped pairs ordered"))
}

// ---------------------------------------------------------------- criterion 5

fn smoothness_advantage() -> Outcome {
    let (clusters, per, dim, k) = (3, 30, 8, 10);
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..20u64 {
        let mut rng = seeded(500 + seed);
        let normal = rand_distr::StandardNormal;
        let centers =
            Array2::from_shape_fn((clusters, dim), |_| 4.0 * rng.sample::<f64, _>(normal));
        let emb = Array2::from_shape_fn((clusters * per, dim), |(i, c)| {
            centers[[i / per, c]] + rng.sample::<f64, _>(normal)
        });
        let n = emb.nrows();
        let ids: Vec<usize> = (0..n).collect();
        let built = topk_graph(&emb, &ids, k).map_err(err)?;
        let edges = built.undirected_edges();
        let random = degree_matched_random(n, &edges, &mut rng);
        let built_deg = degree_sequence(n, &edges);
        ensure(built_deg == degree_sequence(n, &random), || {
            format!("seed {seed}: degrees not matched")
        })?;
        let s_built = column_smoothness(
            &GraphLaplacian::from_undirected(n, &edges).map_err(err)?,
            &emb,
        )
        .map_err(err)?;
        let s_rand = column_smoothness(
            &GraphLaplacian::from_undirected(n, &random).map_err(err)?,
            &emb,
        )
        .map_err(err)?;
        if s_built.iter().zip(&s_rand).all(|(a, b)| a < b) {
            wins += 1;
        }
        ratios.push(s_built.iter().sum::<f64>() / s_rand.iter().sum::<f64>());
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let msg =
        format!("{wins}/20 seeds lower in every column, mean built/random ratio {mean_ratio:.3}");
    ensure(wins >= 19, || msg.clone())?;
    Ok(msg)
}

fn degree_sequence(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut deg = vec![0; n];
    for &(a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    deg
}

// ---------------------------------------------------------------- criterion 6

fn homogeneous_oracle(
    walk: &[usize],
    labels: &BTreeMap<usize, usize>,
    training: &HashSet<usize>,
) -> bool {
    let classes: BTreeSet<usize> = walk
        .iter()
        .filter(|v| training.contains(v))
        .filter_map(|v| labels.get(v).copied())
        .collect();
    classes.len() <= 1
}

fn all_walks(graph: &Adj, max_len: usize) -> Vec<Walk> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = (0..graph.node_count()).map(|v| vec![v]).collect();
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in frontier {
            let last = *w.last().unwrap();
            for &x in graph.neighbors_of(last) {
                let mut e = w.clone();
                e.push(x);
                next.push(e);
            }
            out.push(Walk { nodes: w });
        }
        frontier = next;
    }
    out
}

fn label_constraint() -> Outcome {
    // Nodes 0..5 are targets; 5 and 6 are unlabeled auxiliaries.
    let graph = Adj::from_edges(
        7,
        &[
            (0, 5),
            (1, 5),
            (2, 5),
            (2, 6),
            (3, 6),
            (4, 6),
            (0, 1),
            (3, 4),
        ],
    );
    let walks = all_walks(&graph, 5);
    let targets = 5;
    let mut decisions = 0usize;
    for assignment in 0..(1u32 << targets) {
        let labels: BTreeMap<usize, usize> = (0..targets)
            .map(|v| (v, ((assignment >> v) & 1) as usize))
            .collect();
        for mask in 0..(1u32 << targets) {
            let training: HashSet<usize> = (0..targets).filter(|v| mask >> v & 1 == 1).collect();
            let kept: HashSet<Vec<usize>> = retain_labeled_walks(&walks, &labels, &training)
                .into_iter()
                .map(|w| w.nodes)
                .collect();
            // Test labels hidden, and test labels flipped.
            let visible: BTreeMap<usize, usize> = labels
                .iter()
                .filter(|(v, _)| training.contains(v))
                .map(|(&v, &c)| (v, c))
                .collect();
            let flipped: BTreeMap<usize, usize> = labels
                .iter()
                .map(|(&v, &c)| (v, if training.contains(&v) { c } else { 1 - c }))
                .collect();
            let kept_visible = retain_labeled_walks(&walks, &visible, &training);
            let kept_flipped = retain_labeled_walks(&walks, &flipped, &training);
            ensure(
                kept_visible.len() == kept.len() && kept_flipped.len() == kept.len(),
                || {
                    format!(
                        "labels {assignment:05b} mask {mask:05b}: test labels changed retention"
                    )
                },
            )?;
            for w in &walks {
                let expect = homogeneous_oracle(&w.nodes, &labels, &training);
                ensure(kept.contains(&w.nodes) == expect, || {
                    format!(
                        "walk {:?} labels {assignment:05b} mask {mask:05b}: kept={}",
                        w.nodes, !expect
                    )
                })?;
                decisions += 1;
            }
        }
    }

    // Sampled walks on a synthetic graph with an actual stratified split.
    let synthetic = gen_synthetic(
        &SyntheticSpec {
            p_inter: 0.05,
            ..Default::default()
        },
        6,
    )
    .map_err(err)?;
    let g = &synthetic.graph;
    let split = togrl_core::pipeline::split_labels(g.labels(), 0.3, 6);
    let training: HashSet<usize> = split.train.keys().copied().collect();
    let config = WalkConfig {
        walk_length: 12,
        walks_per_node: 4,
        seed: 6,
        ..Default::default()
    };
    let starts: Vec<usize> = (0..g.node_count()).collect();
    let sampled = generate_walks(g, &starts, &config).map_err(err)?;
    let kept = retain_labeled_walks(&sampled, g.labels(), &training);
    let kept_masked = retain_labeled_walks(&sampled, &split.train, &training);
    ensure(kept == kept_masked, || {
        "masking evaluation labels changed sampled retention".into()
    })?;
    let expected: Vec<&Walk> = sampled
        .iter()
        .filter(|w| homogeneous_oracle(&w.nodes, g.labels(), &training))
        .collect();
    ensure(kept.iter().collect::<Vec<_>>() == expected, || {
        "sampled retention differs from oracle".into()
    })?;
    Ok(format!(
        "{decisions} exhaustive decisions; {}/{} sampled walks kept",
        kept.len(),
        sampled.len()
    ))
}

// ---------------------------------------------------------------- pipelines

fn classification_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 3,
        nodes_per_class: 60,
        aux_types: vec![
            AuxType {
                name: "A".into(),
                count: 90,
            },
            AuxType {
                name: "S".into(),
                count: 18,
            },
        ],
        feature_noise: 0.5,
        ..Default::default()
    }
}

fn pipeline_config(data: &Path, out: &Path, seed: u64) -> PipelineConfig {
    let mut config = PipelineConfig {
        seed,
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    config.data.dir = data.to_path_buf();
    config.walk.walk_length = 20;
    config.walk.walks_per_node = 5;
    config.walk.window = 3;
    config.topo.backbone = Backbone::Gcn;
    config.topo.hidden_dim = 32;
    config.topo.embed_dim = 32;
    config.topo.epochs = 20;
    config.topo.batch_walks = 64;
    config.graph.k = 20;
    config.repr.hidden_dim = 32;
    config.repr.out_dim = 32;
    config.apply_seeds();
    config
}

fn write_synthetic(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<HeteroGraph, String> {
    let synthetic = gen_synthetic(spec, seed).map_err(err)?;
    synthetic.graph.write_dir(dir).map_err(err)?;
    Ok(synthetic.graph)
}

// ---------------------------------------------------------------- criterion 7

fn end_to_end_classification() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let data = tmp.path().join("data");
    write_synthetic(&classification_spec(), 70, &data)?;
    let config = pipeline_config(&data, &tmp.path().join("run"), 70);
    let summary = run_pipeline(&config).map_err(err)?;
    let macro_f1 = summary.report.macro_f1.ok_or("no macro F1")?.mean;
    let micro_f1 = summary.report.micro_f1.ok_or("no micro F1")?.mean;
    let msg = format!("macro F1 {macro_f1:.4}, micro F1 {micro_f1:.4} (5-fold mean, k=20)");
    ensure(macro_f1 >= 0.90 && micro_f1 >= 0.90, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- criterion 8

fn prompt_non_inferiority() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let data = tmp.path().join("data");
    // The noisier task keeps both decoders off the ceiling.
    let graph = write_synthetic(&hub_spec(), 80, &data)?;
    let config = pipeline_config(&data, &tmp.path().join("run"), 80);
    run_pipeline(&config).map_err(err)?;
    let (ids, emb) =
        read_node_embeddings(&config.output_dir.join(EMBEDDINGS_FILE), &graph).map_err(err)?;
    let row: HashMap<usize, usize> = ids.iter().enumerate().map(|(r, &v)| (v, r)).collect();
    let classes = graph.num_classes();

    let prompt_cfg = DecoderConfig::default();
    let plain_cfg = DecoderConfig {
        use_prompt: false,
        ..Default::default()
    };
    let (mut prompt_scores, mut plain_scores) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let mut rng = seeded(800 + seed);
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&v, &c) in graph.labels() {
            by_class.entry(c).or_default().push(row[&v]);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (c, mut rows) in by_class {
            rows.shuffle(&mut rng);
            train.extend(rows[..5].iter().map(|&r| (r, c)));
            test.extend(rows[5..].iter().map(|&r| (r, c)));
        }
        let labels: Vec<usize> = test.iter().map(|&(_, c)| c).collect();
        let test_rows: Vec<usize> = test.iter().map(|&(r, _)| r).collect();
        let test_emb = emb.select(ndarray::Axis(0), &test_rows);
        for (cfg, scores) in [
            (&prompt_cfg, &mut prompt_scores),
            (&plain_cfg, &mut plain_scores),
        ] {
            let state = train_decoder(&emb, &train, classes, cfg, seed)
                .map_err(err)?
                .state;
            let preds: Vec<usize> = predict(&test_emb, &state, cfg.use_prompt)
                .map_err(err)?
                .into_iter()
                .map(|p| p.class)
                .collect();
            scores.push(micro_f1(&preds, &labels).map_err(err)?);
        }

        // With an empty prompt both decoders must agree bit for bit.
        let zero = DecoderConfig {
            prompt_dim: 0,
            ..Default::default()
        };
        let zero_plain = DecoderConfig {
            prompt_dim: 0,
            use_prompt: false,
            ..Default::default()
        };
        let a = train_decoder(&emb, &train, classes, &zero, seed)
            .map_err(err)?
            .state;
        let b = train_decoder(&emb, &train, classes, &zero_plain, seed)
            .map_err(err)?
            .state;
        let pa = predict(&emb, &a, true).map_err(err)?;
        let pb = predict(&emb, &b, false).map_err(err)?;
        let same = pa.iter().zip(&pb).all(|(x, y)| {
            x.class == y.class
                && x.logits
                    .iter()
                    .zip(&y.logits)
                    .all(|(u, v)| u.to_bits() == v.to_bits())
        });
        ensure(same && a == b, || {
            format!("seed {seed}: d_p = 0 decoders differ")
        })?;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pm, qm) = (mean(&prompt_scores), mean(&plain_scores));
    let msg =
        format!("prompt micro F1 {pm:.4} vs plain {qm:.4} over 10 seeds; d_p = 0 bit-identical");
    ensure(pm >= qm - 0.01, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- criterion 9

fn hub_spec() -> SyntheticSpec {
    SyntheticSpec {
        hub_fraction: 0.1,
        feature_noise: 2.0,
        ..classification_spec()
    }
}

fn hub_robustness() -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let tmp = tempfile::tempdir().map_err(err)?;
        let data = tmp.path().join("data");
        write_synthetic(&hub_spec(), 900 + seed, &data)?;
        let config = pipeline_config(&data, &tmp.path().join("run"), 900 + seed);
        let ours = run_pipeline(&config)
            .map_err(err)?
            .report
            .macro_f1
            .ok_or("no macro F1")?
            .mean;
        let prepared = prepare(&config).map_err(err)?;
        let base = raw_graph_baseline(
            &prepared.original,
            &config.repr,
            &prepared.labels.eval,
            &config.decoder,
            config.stage_seed("eval"),
        )
        .map_err(err)?
        .macro_f1
        .ok_or("no baseline macro F1")?
        .mean;
        if ours >= base {
            wins += 1;
        }
        rows.push(format!("{ours:.3}/{base:.3}"));
    }
    let msg = format!(
        "{wins}/10 seeds at or above raw-graph GCN (ours/raw: {})",
        rows.join(" ")
    );
    ensure(wins >= 8, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- criterion 10

fn metric_oracles() -> Outcome {
    // (preds, labels, per-class F1 from the confusion matrix, micro F1)
    type Case = (&'static [usize], &'static [usize], &'static [f64], f64);
    let cases: [Case; 20] = [
        (&[0, 1, 2], &[0, 1, 2], &[1.0, 1.0, 1.0], 1.0),
        (&[1, 0], &[0, 1], &[0.0, 0.0], 0.0),
        (
            &[0, 0, 1, 1],
            &[0, 1, 1, 1],
            &[2.0 / 3.0, 4.0 / 5.0],
            3.0 / 4.0,
        ),
        (&[0, 0, 0, 0], &[0, 0, 1, 1], &[4.0 / 6.0, 0.0], 2.0 / 4.0),
        (
            &[0, 1, 1, 2, 2, 2],
            &[0, 1, 2, 2, 2, 1],
            &[1.0, 2.0 / 4.0, 4.0 / 6.0],
            4.0 / 6.0,
        ),
        (&[2, 2, 2], &[0, 1, 2], &[0.0, 0.0, 2.0 / 4.0], 1.0 / 3.0),
        (&[0], &[0], &[1.0], 1.0),
        (
            &[0, 1, 0, 1, 0],
            &[0, 0, 0, 1, 1],
            &[4.0 / 6.0, 2.0 / 4.0],
            3.0 / 5.0,
        ),
        (&[3, 3, 0, 0], &[0, 0, 3, 3], &[0.0, 0.0, 0.0, 0.0], 0.0),
        (
            &[0, 1, 2, 3],
            &[0, 1, 2, 2],
            &[1.0, 1.0, 2.0 / 3.0, 0.0],
            3.0 / 4.0,
        ),
        (
            &[1, 1, 1, 1, 0],
            &[1, 1, 1, 1, 1],
            &[0.0, 8.0 / 9.0],
            4.0 / 5.0,
        ),
        (
            &[0, 2, 1, 0, 2, 1],
            &[0, 1, 2, 0, 1, 2],
            &[1.0, 0.0, 0.0],
            2.0 / 6.0,
        ),
        (
            &[0, 0, 1, 2, 2],
            &[0, 1, 1, 2, 0],
            &[2.0 / 4.0, 2.0 / 3.0, 2.0 / 3.0],
            3.0 / 5.0,
        ),
        (&[1, 1], &[1, 1], &[0.0, 1.0], 1.0),
        (
            &[0, 1, 1, 1, 1, 1],
            &[0, 0, 0, 1, 1, 1],
            &[2.0 / 4.0, 6.0 / 8.0],
            4.0 / 6.0,
        ),
        (
            &[2, 0, 2, 0],
            &[2, 2, 0, 0],
            &[2.0 / 4.0, 0.0, 2.0 / 4.0],
            2.0 / 4.0,
        ),
        (
            &[0, 1, 2, 0, 1, 2, 0],
            &[0, 1, 2, 1, 2, 0, 0],
            &[4.0 / 6.0, 2.0 / 4.0, 2.0 / 4.0],
            4.0 / 7.0,
        ),
        (
            &[1, 2, 3, 4],
            &[1, 2, 3, 4],
            &[0.0, 1.0, 1.0, 1.0, 1.0],
            1.0,
        ),
        (&[0, 0, 0, 1], &[1, 1, 1, 1], &[0.0, 2.0 / 5.0], 1.0 / 4.0),
        (
            &[1, 0, 2, 2, 1, 0, 0, 2],
            &[1, 0, 2, 1, 1, 0, 2, 2],
            &[4.0 / 5.0, 4.0 / 5.0, 4.0 / 6.0],
            6.0 / 8.0,
        ),
    ];
    for (i, (preds, labels, per_class, micro)) in cases.iter().enumerate() {
        let expect_macro = per_class.iter().fold(0.0, |acc, f| acc + f) / per_class.len() as f64;
        let got_macro = macro_f1(preds, labels).map_err(err)?;
        let got_micro = micro_f1(preds, labels).map_err(err)?;
        ensure(got_macro == expect_macro, || {
            format!("case {i}: macro {got_macro} != {expect_macro}")
        })?;
        ensure(got_micro == *micro, || {
            format!("case {i}: micro {got_micro} != {micro}")
        })?;
        let explicit = macro_f1_with_classes(preds, labels, per_class.len()).map_err(err)?;
        ensure(explicit == expect_macro, || {
            format!("case {i}: explicit class count")
        })?;
    }

    let mut rng = seeded(10);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let n = rng.random_range(2..=200);
        let levels = if trial % 2 == 0 { 5 } else { 1000 };
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in (0..n).filter(|&i| labels[i]) {
            for j in (0..n).filter(|&j| !labels[j]) {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        let dev = (auc(&scores, &labels).map_err(err)? - wins / pairs).abs();
        worst = worst.max(dev);
        ensure(dev <= 1e-12, || {
            format!("trial {trial}: AUC off by {dev:e}")
        })?;
    }

    let mut link_cases = 0;
    for seed in 0..10u64 {
        let graph = gen_synthetic(&SyntheticSpec::default(), 100 + seed)
            .map_err(err)?
            .graph;
        for relation in 0..graph.schema().relations.len() {
            check_link_split(&graph, relation, seed)?;
            link_cases += 1;
        }
    }
    let small = tiny_hetero().map_err(err)?;
    for seed in 0..50 {
        check_link_split(&small, 0, seed)?;
    }
    ensure(lp_protocol(&small, 1, 0.2, 0).is_err(), || {
        "relation with < 5 edges accepted".into()
    })?;
    Ok(format!(
        "20 F1 cases exact, 200 AUC cases (max dev {worst:.0e}), {} link splits",
        link_cases + 50
    ))
}

fn check_link_split(graph: &HeteroGraph, relation: usize, seed: u64) -> Result<(), String> {
    let unordered = |a: usize, b: usize| (a.min(b), a.max(b));
    let split = lp_protocol(graph, relation, 0.2, seed).map_err(err)?;
    let distinct: BTreeSet<(usize, usize)> = graph
        .edges()
        .iter()
        .filter(|e| e.relation == relation)
        .map(|e| unordered(e.src, e.dst))
        .collect();
    let expect = distinct.len() / 5;
    let ctx = format!("relation {relation} seed {seed}");
    ensure(split.positives.len() == expect, || {
        format!(
            "{ctx}: {} positives, expected {expect} of {}",
            split.positives.len(),
            distinct.len()
        )
    })?;
    ensure(split.negatives.len() == expect, || {
        format!("{ctx}: negative count")
    })?;
    let removed: BTreeSet<(usize, usize)> = split
        .positives
        .iter()
        .map(|&(a, b)| unordered(a, b))
        .collect();
    ensure(
        removed.len() == expect && removed.is_subset(&distinct),
        || format!("{ctx}: positives"),
    )?;
    let expected_train: BTreeSet<Edge> = graph
        .edges()
        .iter()
        .filter(|e| !removed.contains(&unordered(e.src, e.dst)))
        .copied()
        .collect();
    let train: BTreeSet<Edge> = split.train.edges().iter().copied().collect();
    ensure(train == expected_train, || {
        format!("{ctx}: training edges are not original minus removed pairs")
    })?;
    for v in 0..graph.node_count() {
        for &u in split.train.neighbors_of(v) {
            ensure(!removed.contains(&unordered(u, v)), || {
                format!("{ctx}: removed pair ({v}, {u}) still adjacent")
            })?;
        }
    }
    let rel = &graph.schema().relations[relation];
    let src = graph.schema().type_index(&rel.source).unwrap();
    let dst = graph.schema().type_index(&rel.destination).unwrap();
    let linked: HashSet<(usize, usize)> = graph
        .edges()
        .iter()
        .map(|e| unordered(e.src, e.dst))
        .collect();
    let negs: BTreeSet<(usize, usize)> = split
        .negatives
        .iter()
        .map(|&(a, b)| unordered(a, b))
        .collect();
    ensure(negs.len() == expect, || {
        format!("{ctx}: duplicate negatives")
    })?;
    for &(a, b) in &split.negatives {
        ensure(a != b && !linked.contains(&unordered(a, b)), || {
            format!("{ctx}: negative ({a}, {b}) is linked")
        })?;
        ensure(
            graph.node_type_of(a) == src && graph.node_type_of(b) == dst,
            || format!("{ctx}: negative ({a}, {b}) has the wrong endpoint types"),
        )?;
    }
    Ok(())
}

/// Two types; `PA` has 10 pairs, `PP` only 3, and `AP` mirrors one `PA` pair.
fn tiny_hetero() -> togrl_core::Result<HeteroGraph> {
    let schema = Schema {
        node_types: vec!["P".into(), "A".into()],
        relations: vec![
            RelationType {
                name: "PA".into(),
                source: "P".into(),
                destination: "A".into(),
            },
            RelationType {
                name: "PP".into(),
                source: "P".into(),
                destination: "P".into(),
            },
            RelationType {
                name: "AP".into(),
                source: "A".into(),
                destination: "P".into(),
            },
        ],
        target_type: "P".into(),
        allow_homogeneous: false,
    };
    let n = 9;
    let types = vec![0, 0, 0, 0, 0, 1, 1, 1, 1];
    let mut edges: Vec<Edge> = [
        (0, 5),
        (0, 6),
        (1, 5),
        (1, 7),
        (2, 6),
        (2, 8),
        (3, 7),
        (3, 8),
        (4, 5),
        (4, 8),
    ]
    .iter()
    .map(|&(src, dst)| Edge {
        src,
        dst,
        relation: 0,
    })
    .collect();
    edges.extend([(0, 1), (1, 2), (3, 4)].iter().map(|&(src, dst)| Edge {
        src,
        dst,
        relation: 1,
    }));
    edges.push(Edge {
        src: 5,
        dst: 0,
        relation: 2,
    });
    let labels: BTreeMap<usize, usize> = (0..5).map(|v| (v, v % 2)).collect();
    HeteroGraph::new(
        schema,
        (0..n).map(|i| format!("n{i}")).collect(),
        types,
        edges,
        Array2::zeros((n, 2)),
        labels,
    )
}

// ---------------------------------------------------------------- criterion 11

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let data = tmp.path().join("data");
    write_synthetic(&SyntheticSpec::default(), 11, &data)?;
    let first_cfg = pipeline_config(&data, &tmp.path().join("a"), 11);
    let second_cfg = pipeline_config(&data, &tmp.path().join("b"), 11);
    let first = run_pipeline(&first_cfg).map_err(err)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(err)?;
    let second = pool.install(|| run_pipeline(&second_cfg)).map_err(err)?;
    let a = &first.manifest.artifacts;
    let b = &second.manifest.artifacts;
    ensure(a.keys().eq(b.keys()), || "artifact sets differ".into())?;
    let differing: Vec<&String> = a
        .iter()
        .filter(|(k, v)| b[*k] != **v)
        .map(|(k, _)| k)
        .collect();
    // The saved config records its own output directory.
    let differing: Vec<&&String> = differing
        .iter()
        .filter(|k| k.as_str() != "config.toml")
        .collect();
    ensure(differing.is_empty(), || {
        format!("differing artifacts: {differing:?}")
    })?;
    for name in [
        "embeddings.tsv",
        "new_graph/edges.tsv",
        "report.json",
        "topo_embeddings.tsv",
    ] {
        let x = std::fs::read(first_cfg.output_dir.join(name)).map_err(err)?;
        let y = std::fs::read(second_cfg.output_dir.join(name)).map_err(err)?;
        ensure(x == y, || format!("{name} differs"))?;
    }
    Ok(format!(
        "{} artifacts byte-identical across thread counts",
        a.len()
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [Criterion; 11] = [
        ("walk kernel oracle", Duration::from_secs(10), walk_kernel),
        ("gradient suite", Duration::from_secs(30), gradient_suite),
        (
            "smoothness equivalence",
            Duration::from_secs(5),
            smoothness_equivalence,
        ),
        (
            "kNN graph invariants",
            Duration::from_secs(10),
            knn_invariants,
        ),
        (
            "smoothness advantage",
            Duration::from_secs(10),
            smoothness_advantage,
        ),
        ("label constraint", Duration::from_secs(5), label_constraint),
        (
            "end-to-end classification",
            Duration::from_secs(180),
            end_to_end_classification,
        ),
        (
            "prompt non-inferiority",
            Duration::from_secs(120),
            prompt_non_inferiority,
        ),
        (
            "hub-noise robustness",
            Duration::from_secs(300),
            hub_robustness,
        ),
        ("metric oracles", Duration::from_secs(5), metric_oracles),
        ("determinism", Duration::from_secs(360), determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if only.is_some_and(|o| o != number) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= *budget => ("PASS", d),
            Ok(d) => (
                "FAIL",
                format!("{d}; over the {}s budget", budget.as_secs()),
            ),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!(
            "criterion {number:>2} {name}: {status} ({detail}; {:.2}s)",
            elapsed.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
