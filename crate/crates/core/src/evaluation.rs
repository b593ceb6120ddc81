//! Utility and interpretability metrics.
//!
//! All edge-level metrics work on undirected edges: the two stored
//! directions of an edge are merged into one score, the mean of their
//! weights.

use std::collections::BTreeSet;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::{Dataset, Task};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, degree_sequence, k_hop_neighborhood, Graph};
use crate::model::{embed_with_weights, infer_batch, ModelState, GIN_LAYERS};

pub const FAITHFULNESS_BINS: usize = 30;
pub const HISTOGRAM_BINS: usize = 10;
pub const PROBE_ITERATIONS: usize = 500;
pub const PROBE_STEP: f64 = 0.5;
/// Graph count cap for the continuity metric (six batches of 256).
pub const CONTINUITY_SAMPLE: usize = 1536;
/// Edge share kept in an interpretation when no motif-size prior exists.
pub const INTERPRETATION_SHARE: f64 = 0.1;
/// Share of the sample forming a graph's embedding neighbourhood.
pub const NEIGHBOURHOOD_SHARE: f64 = 0.1;

const INFER_CHUNK_NODES: usize = 20_000;

// ---------------------------------------------------------------------------
// downstream accuracy

/// Accuracy of a multinomial logistic regression trained on `train_emb` by
/// full-batch gradient descent on standardised inputs.
pub fn linear_probe_accuracy(
    train_emb: &Tensor,
    train_labels: &[usize],
    eval_emb: &Tensor,
    eval_labels: &[usize],
) -> Result<f64> {
    if train_emb.nrows() != train_labels.len() || eval_emb.nrows() != eval_labels.len() {
        return Err(Error::ShapeMismatch {
            op: "linear_probe_accuracy",
            lhs: vec![train_emb.nrows(), eval_emb.nrows()],
            rhs: vec![train_labels.len(), eval_labels.len()],
        });
    }
    if train_emb.ncols() != eval_emb.ncols() {
        return Err(Error::ShapeMismatch {
            op: "linear_probe_accuracy",
            lhs: train_emb.shape().to_vec(),
            rhs: eval_emb.shape().to_vec(),
        });
    }
    if eval_labels.is_empty() {
        return Err(Error::Metric("empty evaluation set".into()));
    }
    let k = train_labels.iter().chain(eval_labels).copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; k];
    for &l in train_labels {
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    let accuracy = |pred: &dyn Fn(usize) -> usize| {
        let hits = (0..eval_labels.len()).filter(|&i| pred(i) == eval_labels[i]).count();
        hits as f64 / eval_labels.len() as f64
    };
    if present < 2 {
        let majority = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
        log::warn!("linear probe: fewer than two training categories, predicting the majority class");
        return Ok(accuracy(&|_| majority));
    }

    let n = train_emb.nrows() as f64;
    let mean = train_emb.mean_axis(Axis(0)).expect("non-empty");
    let std = train_emb
        .var_axis(Axis(0), 0.0)
        .mapv(|v| if v.sqrt() < 1e-12 { 1.0 } else { v.sqrt() });
    let x = (train_emb - &mean) / &std;
    let xe = (eval_emb - &mean) / &std;

    let mut onehot = Tensor::zeros((train_labels.len(), k));
    for (i, &l) in train_labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }
    let mut w = Tensor::zeros((x.ncols(), k));
    let mut b = Tensor::zeros((1, k));
    for _ in 0..PROBE_ITERATIONS {
        let mut p = x.dot(&w) + &b;
        softmax_rows(&mut p);
        let resid = p - &onehot;
        let gw = x.t().dot(&resid) / n;
        let gb = resid.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        w.scaled_add(-PROBE_STEP, &gw);
        b.scaled_add(-PROBE_STEP, &gb);
    }
    let logits = xe.dot(&w) + &b;
    Ok(accuracy(&|i| argmax(logits.row(i).iter().copied())))
}

fn softmax_rows(m: &mut Tensor) {
    for mut row in m.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row /= s;
    }
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

// ---------------------------------------------------------------------------
// edge-level helpers

/// Undirected scores (mean of directions) and motif labels of one graph.
pub fn undirected_scores(g: &Graph, directed: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let und = g.undirected_edges();
    let scores = und
        .iter()
        .map(|e| e.directed.iter().map(|&i| directed[i]).sum::<f64>() / e.directed.len() as f64)
        .collect();
    let labels = match &g.gt_edge_mask {
        Some(m) => und.iter().map(|e| e.directed.iter().any(|&i| m[i])).collect(),
        None => vec![false; und.len()],
    };
    (scores, labels)
}

/// ROC-AUC of `scores` against binary `labels` through the rank-sum
/// statistic, tied scores sharing their mean rank. `None` when one class is
/// absent.
pub fn interpretability_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += mean_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub fn sparsity_index(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Metric("sparsity index of an empty weight set".into()));
    }
    Ok(weights.iter().sum::<f64>() / weights.len() as f64)
}

/// Mass of `weights` in ten equal bins over `[0, 1)`; 1.0 falls in the last.
pub fn weight_histogram(weights: &[f64]) -> Result<[f64; HISTOGRAM_BINS]> {
    if weights.is_empty() {
        return Err(Error::Metric("histogram of an empty weight set".into()));
    }
    let mut h = [0.0; HISTOGRAM_BINS];
    for &w in weights {
        let b = ((w * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1.0;
    }
    let n = weights.len() as f64;
    for x in &mut h {
        *x /= n;
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// faithfulness

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalOrder {
    Decreasing,
    Increasing,
    /// Decreasing order of a random permutation of the weights.
    Random,
    /// Motif edges first, then the rest.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessCurve {
    /// `(fraction of edges removed, normalised distance)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub degenerate: bool,
}

fn bin_of(w: f64) -> usize {
    ((w * FAITHFULNESS_BINS as f64).floor().max(0.0) as usize).min(FAITHFULNESS_BINS - 1)
}

/// Removal groups over undirected edges, in removal order.
fn removal_groups(scores: &[f64], labels: &[bool], order: RemovalOrder, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let by_bins = |s: &[f64], descending: bool| {
        let mut bins = vec![Vec::new(); FAITHFULNESS_BINS];
        for (i, &w) in s.iter().enumerate() {
            bins[bin_of(w)].push(i);
        }
        if descending {
            bins.reverse();
        }
        bins.into_iter().filter(|b| !b.is_empty()).collect::<Vec<_>>()
    };
    match order {
        RemovalOrder::Decreasing => by_bins(scores, true),
        RemovalOrder::Increasing => by_bins(scores, false),
        RemovalOrder::Random => {
            let mut permuted = scores.to_vec();
            permuted.shuffle(rng);
            by_bins(&permuted, true)
        }
        RemovalOrder::GroundTruth => {
            let gt: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
            let rest: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
            [gt, rest].into_iter().filter(|g| !g.is_empty()).collect()
        }
    }
}

/// Curve from distances after each cumulative removal step. `steps` holds
/// `(fraction removed, raw distance)` excluding the origin; the final entry
/// is the all-removed graph.
fn normalise_curve(steps: &[(f64, f64)]) -> FaithfulnessCurve {
    let last = steps.last().map_or(0.0, |s| s.1);
    if steps.is_empty() || last < 1e-12 {
        let mut points = vec![(0.0, 0.0)];
        points.extend(steps.iter().map(|&(x, _)| (x, 0.0)));
        if points.len() == 1 {
            points.push((1.0, 0.0));
        }
        return FaithfulnessCurve {
            points,
            auc: 0.0,
            degenerate: true,
        };
    }
    let mut points = vec![(0.0, 0.0)];
    points.extend(steps.iter().map(|&(x, d)| (x, d / last)));
    let auc = trapezoid(&points);
    FaithfulnessCurve {
        points,
        auc,
        degenerate: false,
    }
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// One perturbation job: a graph with directed weights, and the row of the
/// embedding output that is compared against the reference.
struct Job {
    graph: Graph,
    weights: Vec<f64>,
    row: usize,
    groups: Vec<Vec<usize>>,
    undirected: Vec<Vec<usize>>,
}

impl Job {
    fn variant(&self, removed_groups: usize) -> (Graph, Vec<f64>) {
        let mut drop = vec![false; self.graph.num_edges()];
        for g in &self.groups[..removed_groups] {
            for &u in g {
                for &d in &self.undirected[u] {
                    drop[d] = true;
                }
            }
        }
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for (i, &e) in self.graph.edges.iter().enumerate() {
            if !drop[i] {
                edges.push(e);
                weights.push(self.weights[i]);
            }
        }
        let g = Graph {
            num_nodes: self.graph.num_nodes,
            features: self.graph.features.clone(),
            edges,
            graph_label: None,
            node_labels: None,
            gt_edge_mask: None,
        };
        (g, weights)
    }
}

fn run_jobs(state: &ModelState, jobs: &[Job]) -> Result<Vec<FaithfulnessCurve>> {
    // enumerate every variant: (job, removed groups)
    let mut variants: Vec<(usize, usize)> = Vec::new();
    for (j, job) in jobs.iter().enumerate() {
        for r in 0..=job.groups.len() {
            variants.push((j, r));
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(variants.len());
    let mut start = 0;
    while start < variants.len() {
        let mut graphs = Vec::new();
        let mut weights = Vec::new();
        let mut pick = Vec::new();
        let mut nodes = 0;
        let mut end = start;
        while end < variants.len() && (nodes < INFER_CHUNK_NODES || end == start) {
            let (j, r) = variants[end];
            let (g, w) = jobs[j].variant(r);
            let row = match state.task {
                Task::Graph => graphs.len(),
                Task::Node => nodes + jobs[j].row,
            };
            nodes += g.num_nodes;
            pick.push(row);
            weights.extend(w);
            graphs.push(g);
            end += 1;
        }
        let batch = batch_graphs(&graphs)?;
        let emb = embed_with_weights(state, &batch, &weights)?;
        rows.extend(pick.iter().map(|&r| emb.row(r).to_vec()));
        start = end;
    }

    let mut curves = Vec::with_capacity(jobs.len());
    let mut k = 0;
    for job in jobs {
        let reference = &rows[k];
        let total: usize = job.undirected.len();
        let mut removed = 0usize;
        let mut steps = Vec::with_capacity(job.groups.len());
        for (gi, group) in job.groups.iter().enumerate() {
            removed += group.len();
            let emb = &rows[k + gi + 1];
            let dist = emb
                .iter()
                .zip(reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            steps.push((removed as f64 / total as f64, dist));
        }
        let curve = normalise_curve(&steps);
        if curve.degenerate {
            log::debug!("faithfulness: degenerate curve (all-removed distance below 1e-12)");
        }
        curves.push(curve);
        k += job.groups.len() + 1;
    }
    Ok(curves)
}

fn make_job(graph: Graph, weights: Vec<f64>, row: usize, order: RemovalOrder, rng: &mut ChaCha8Rng) -> Result<Job> {
    let (scores, labels) = undirected_scores(&graph, &weights);
    if order == RemovalOrder::GroundTruth && graph.gt_edge_mask.is_none() {
        return Err(Error::Metric("ground-truth removal order needs a motif mask".into()));
    }
    let groups = removal_groups(&scores, &labels, order, rng);
    let undirected = graph.undirected_edges().into_iter().map(|e| e.directed).collect();
    Ok(Job {
        graph,
        weights,
        row,
        groups,
        undirected,
    })
}

/// Faithfulness curve of a single graph under the model's own inference
/// weights (graph task).
pub fn faithfulness_curve(state: &ModelState, graph: &Graph, order: RemovalOrder, seed: u64) -> Result<FaithfulnessCurve> {
    let mut curves = faithfulness_graphs(state, std::slice::from_ref(graph), order, seed)?;
    Ok(curves.remove(0))
}

/// Faithfulness curves for a set of graphs (graph task).
pub fn faithfulness_graphs(state: &ModelState, graphs: &[Graph], order: RemovalOrder, seed: u64) -> Result<Vec<FaithfulnessCurve>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = infer_edge_weights(state, graphs)?;
    let jobs = graphs
        .iter()
        .zip(weights)
        .map(|(g, w)| make_job(g.clone(), w, 0, order, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    run_jobs(state, &jobs)
}

/// Per-node faithfulness curves on each node's `GIN_LAYERS`-hop
/// neighbourhood (node task).
pub fn faithfulness_nodes(state: &ModelState, graph: &Graph, nodes: &[usize], order: RemovalOrder, seed: u64) -> Result<Vec<FaithfulnessCurve>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = infer_batch(state, &batch_graphs(&[graph])?)?;
    let jobs = nodes
        .iter()
        .map(|&c| {
            let sub = k_hop_neighborhood(graph, c, GIN_LAYERS)?;
            let w = sub.edge_ids.iter().map(|&e| full.edge_weights[e]).collect();
            make_job(sub.graph, w, 0, order, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    run_jobs(state, &jobs)
}

/// Directed inference weights per graph, computed in node-bounded chunks.
pub fn infer_edge_weights(state: &ModelState, graphs: &[Graph]) -> Result<Vec<Vec<f64>>> {
    Ok(infer_graphs(state, graphs)?.1)
}

/// Embeddings (one row per graph) and directed weights per graph.
pub fn infer_graphs(state: &ModelState, graphs: &[Graph]) -> Result<(Tensor, Vec<Vec<f64>>)> {
    let mut rows = Vec::with_capacity(graphs.len());
    let mut weights = Vec::with_capacity(graphs.len());
    let mut start = 0;
    while start < graphs.len() {
        let mut end = start;
        let mut nodes = 0;
        while end < graphs.len() && (nodes < INFER_CHUNK_NODES || end == start) {
            nodes += graphs[end].num_nodes;
            end += 1;
        }
        let batch = batch_graphs(&graphs[start..end])?;
        let inf = infer_batch(state, &batch)?;
        for i in 0..batch.num_graphs() {
            weights.push(inf.edge_weights[batch.edge_range(i)].to_vec());
            if state.task == Task::Graph {
                rows.push(inf.embeddings.row(i).to_owned());
            }
        }
        if state.task == Task::Node {
            rows.extend(inf.embeddings.rows().into_iter().map(|r| r.to_owned()));
        }
        start = end;
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let emb = if views.is_empty() {
        Tensor::zeros((0, crate::model::EMBED_DIM))
    } else {
        ndarray::stack(Axis(0), &views).expect("equal widths")
    };
    Ok((emb, weights))
}

// ---------------------------------------------------------------------------
// continuity

/// 1-Wasserstein distance between the empirical distributions of two
/// samples, `∫ |F_x(t) - F_y(t)| dt`.
pub fn wasserstein_1d(x: &[f64], y: &[f64]) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = xs.iter().chain(&ys).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    for w in grid.windows(2) {
        while i < xs.len() && xs[i] <= w[0] {
            i += 1;
        }
        while j < ys.len() && ys[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / nx - j as f64 / ny).abs() * (w[1] - w[0]);
    }
    total
}

/// Degree sequence of the interpretation keeping the `keep` highest-scored
/// undirected edges.
pub fn interpretation_degrees(g: &Graph, directed: &[f64], keep: usize) -> Result<Vec<f64>> {
    let (scores, _) = undirected_scores(g, directed);
    let und = g.undirected_edges();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut mask = vec![false; g.num_edges()];
    for &u in order.iter().take(keep) {
        for &d in &und[u].directed {
            mask[d] = true;
        }
    }
    Ok(degree_sequence(g, &mask)?.into_iter().map(|d| d as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Continuity {
    pub w1_global: f64,
    pub w1_local: f64,
}

impl Continuity {
    pub fn gap(&self) -> f64 {
        self.w1_global - self.w1_local
    }
}

/// Global and local expected interpretation distances. `degrees[i]` is the
/// interpretation degree sequence of graph `i`, `embeddings` row `i` its
/// embedding. Self-pairs are excluded from both expectations.
pub fn continuity_from_parts(degrees: &[Vec<f64>], embeddings: &Tensor) -> Result<Continuity> {
    let n = degrees.len();
    if n < 10 {
        return Err(Error::Metric(format!("continuity needs at least 10 graphs, got {n}")));
    }
    if embeddings.nrows() != n {
        return Err(Error::ShapeMismatch {
            op: "continuity",
            lhs: vec![n],
            rhs: embeddings.shape().to_vec(),
        });
    }
    let neighbours = ((NEIGHBOURHOOD_SHARE * n as f64).round() as usize).clamp(1, n - 1);
    let mut dw = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = wasserstein_1d(&degrees[i], &degrees[j]);
            dw[i * n + j] = d;
            dw[j * n + i] = d;
        }
    }
    let global = dw.iter().sum::<f64>() / (n * (n - 1)) as f64;

    let mut local = 0.0;
    for i in 0..n {
        let ei = embeddings.row(i);
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = ei
                    .iter()
                    .zip(embeddings.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, j)
            })
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        local += by_dist[..neighbours].iter().map(|&(_, j)| dw[i * n + j]).sum::<f64>() / neighbours as f64;
    }
    Ok(Continuity {
        w1_global: global,
        w1_local: local / n as f64,
    })
}

/// Interpretation size: the dataset's mean motif edge count (rounded) when
/// motif masks exist, otherwise `None` (10% of each graph's edges).
pub fn interpretation_prior(ds: &Dataset) -> Option<usize> {
    ds.mean_gt_edge_count().map(|m| (m.round() as usize).max(1))
}

/// Continuity of interpretations on the first `min(n, 1536)` graphs.
pub fn wasserstein_gap(state: &ModelState, graphs: &[Graph], prior: Option<usize>) -> Result<Continuity> {
    if state.task != Task::Graph {
        return Err(Error::Metric("continuity is defined for graph tasks only".into()));
    }
    let graphs = &graphs[..graphs.len().min(CONTINUITY_SAMPLE)];
    let (emb, weights) = infer_graphs(state, graphs)?;
    let degrees = graphs
        .iter()
        .zip(&weights)
        .map(|(g, w)| {
            let n_und = g.undirected_edges().len();
            let keep = prior.unwrap_or_else(|| (INTERPRETATION_SHARE * n_und as f64).ceil() as usize);
            interpretation_degrees(g, w, keep)
        })
        .collect::<Result<Vec<_>>>()?;
    continuity_from_parts(&degrees, &emb)
}

// ---------------------------------------------------------------------------
// full report

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Acc,
    Auc,
    Faithfulness,
    Wasserstein,
    Sparsity,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Acc, Metric::Auc, Metric::Faithfulness, Metric::Wasserstein, Metric::Sparsity];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "acc" => Ok(Self::Acc),
            "auc" => Ok(Self::Auc),
            "faithfulness" => Ok(Self::Faithfulness),
            "wasserstein" => Ok(Self::Wasserstein),
            "sparsity" => Ok(Self::Sparsity),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub downstream_acc: Option<f64>,
    pub interpretability_auc: Option<f64>,
    pub faithfulness: Option<f64>,
    pub opposite_faithfulness: Option<f64>,
    pub random_faithfulness: Option<f64>,
    pub faithfulness_gap: Option<f64>,
    pub w1_global: Option<f64>,
    pub w1_local: Option<f64>,
    pub wasserstein_gap: Option<f64>,
    pub sparsity_index: Option<f64>,
    pub weight_histogram: Option<[f64; HISTOGRAM_BINS]>,
}

/// Full curves and per-item details for the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsDetail {
    /// Mean normalised curve per order, sampled at `i / 30`.
    pub curves: Vec<(RemovalOrder, Vec<f64>)>,
    pub degenerate_curves: usize,
    pub evaluated_items: usize,
}

fn mean_curve(curves: &[FaithfulnessCurve]) -> Vec<f64> {
    let grid: Vec<f64> = (0..=FAITHFULNESS_BINS).map(|i| i as f64 / FAITHFULNESS_BINS as f64).collect();
    let mut acc = vec![0.0; grid.len()];
    for c in curves {
        for (slot, &x) in acc.iter_mut().zip(&grid) {
            *slot += interpolate(&c.points, x);
        }
    }
    let n = curves.len().max(1) as f64;
    acc.iter().map(|v| v / n).collect()
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            if x1 == x0 {
                return y1;
            }
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    points.last().map_or(0.0, |p| p.1)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn select(emb: &Tensor, idx: &[usize]) -> Tensor {
    emb.select(Axis(0), idx)
}

fn pick_labels(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Downstream accuracy of a frozen model: probe trained on the train split,
/// scored on `split`.
pub fn downstream_accuracy(state: &ModelState, ds: &Dataset, split: EvalSplit) -> Result<f64> {
    let (emb, _) = infer_graphs(state, &ds.graphs)?;
    accuracy_from_embeddings(&emb, ds, split)
}

pub fn accuracy_from_embeddings(emb: &Tensor, ds: &Dataset, split: EvalSplit) -> Result<f64> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Metric("downstream accuracy needs labels".into()))?;
    let s = ds.splits()?;
    let target = match split {
        EvalSplit::Val => &s.val,
        EvalSplit::Test => &s.test,
    };
    linear_probe_accuracy(
        &select(emb, &s.train),
        &pick_labels(&labels, &s.train),
        &select(emb, target),
        &pick_labels(&labels, target),
    )
}

/// Computes the selected metrics on the test split (continuity on the whole
/// dataset, capped at 1536 graphs).
pub fn evaluate(state: &ModelState, ds: &Dataset, metrics: &[Metric], seed: u64) -> Result<(MetricsReport, MetricsDetail)> {
    if state.task != ds.task {
        return Err(Error::InvalidConfig(format!(
            "model task {:?} does not match dataset task {:?}",
            state.task, ds.task
        )));
    }
    let wants = |m: Metric| metrics.contains(&m);
    let splits = ds.splits()?;
    let mut report = MetricsReport::default();
    let mut detail = MetricsDetail::default();

    let (emb, weights) = infer_graphs(state, &ds.graphs)?;

    if wants(Metric::Acc) {
        report.downstream_acc = Some(accuracy_from_embeddings(&emb, ds, EvalSplit::Test)?);
    }

    // edge scores of the evaluated part
    let (scores, labels): (Vec<f64>, Vec<bool>) = match ds.task {
        Task::Graph => {
            let mut s = Vec::new();
            let mut l = Vec::new();
            for &i in &splits.test {
                let (a, b) = undirected_scores(&ds.graphs[i], &weights[i]);
                s.extend(a);
                l.extend(b);
            }
            (s, l)
        }
        Task::Node => undirected_scores(&ds.graphs[0], &weights[0]),
    };

    if wants(Metric::Auc) {
        let has_gt = match ds.task {
            Task::Graph => splits.test.iter().any(|&i| ds.graphs[i].gt_edge_mask.is_some()),
            Task::Node => ds.graphs[0].gt_edge_mask.is_some(),
        };
        report.interpretability_auc = if has_gt { interpretability_auc(&scores, &labels) } else { None };
    }

    if wants(Metric::Sparsity) && !scores.is_empty() {
        report.sparsity_index = Some(sparsity_index(&scores)?);
        report.weight_histogram = Some(weight_histogram(&scores)?);
    }

    if wants(Metric::Faithfulness) {
        let mut aucs = Vec::new();
        for order in [RemovalOrder::Decreasing, RemovalOrder::Increasing, RemovalOrder::Random] {
            let curves = match ds.task {
                Task::Graph => {
                    let test: Vec<Graph> = splits.test.iter().map(|&i| ds.graphs[i].clone()).collect();
                    faithfulness_graphs(state, &test, order, seed)?
                }
                Task::Node => faithfulness_nodes(state, &ds.graphs[0], &splits.test, order, seed)?,
            };
            if order == RemovalOrder::Decreasing {
                detail.degenerate_curves = curves.iter().filter(|c| c.degenerate).count();
                detail.evaluated_items = curves.len();
            }
            detail.curves.push((order, mean_curve(&curves)));
            aucs.push(mean(curves.iter().map(|c| c.auc)));
        }
        report.faithfulness = Some(aucs[0]);
        report.opposite_faithfulness = Some(aucs[1]);
        report.random_faithfulness = Some(aucs[2]);
        report.faithfulness_gap = Some(aucs[0] - aucs[1]);
    }

    if wants(Metric::Wasserstein) && ds.task == Task::Graph {
        let c = wasserstein_gap(state, &ds.graphs, interpretation_prior(ds))?;
        report.w1_global = Some(c.w1_global);
        report.w1_local = Some(c.w1_local);
        report.wasserstein_gap = Some(c.gap());
    }
    Ok((report, detail))
}

/// Distinct sorted values, used by tests and reports.
pub fn distinct(xs: &[f64]) -> Vec<f64> {
    let set: BTreeSet<u64> = xs.iter().map(|x| x.to_bits()).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}
