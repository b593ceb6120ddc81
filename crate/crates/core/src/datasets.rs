//! Synthetic motif benchmarks, the dataset JSON format and split handling.
//!
//! Generated graphs carry constant unit features so that every signal is
//! topological. The planted motif's internal edges form the ground-truth
//! interpretation; the single bridge edge joining a motif to its base graph
//! is not part of it.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const GENERATED_FEATURE_DIM: usize = 10;
pub const BA_BASE_NODES: usize = 20;
pub const TREE_DEPTH: u32 = 8;
pub const TREE_MOTIFS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Graph,
    Node,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub feature_dim: usize,
    pub graphs: Vec<Graph>,
    pub splits: Option<Splits>,
}

impl Dataset {
    /// Number of items the splits index: graphs, or nodes of the single
    /// graph for node tasks.
    pub fn num_items(&self) -> usize {
        match self.task {
            Task::Graph => self.graphs.len(),
            Task::Node => self.graphs.first().map_or(0, |g| g.num_nodes),
        }
    }

    /// Category label per item, when every item has one.
    pub fn labels(&self) -> Option<Vec<usize>> {
        match self.task {
            Task::Graph => self.graphs.iter().map(|g| g.graph_label).collect(),
            Task::Node => self.graphs.first().and_then(|g| g.node_labels.clone()),
        }
    }

    pub fn splits(&self) -> Result<&Splits> {
        self.splits
            .as_ref()
            .ok_or_else(|| Error::InvalidDataset(format!("dataset {} has no splits", self.name)))
    }

    /// Mean number of undirected ground-truth edges over graphs with a mask.
    pub fn mean_gt_edge_count(&self) -> Option<f64> {
        let counts: Vec<usize> = self
            .graphs
            .iter()
            .filter_map(|g| {
                g.gt_edge_mask.as_ref().map(|m| {
                    g.undirected_edges()
                        .iter()
                        .filter(|e| e.directed.iter().any(|&i| m[i]))
                        .count()
                })
            })
            .collect();
        (!counts.is_empty()).then(|| counts.iter().sum::<usize>() as f64 / counts.len() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Node && self.graphs.len() != 1 {
            return Err(Error::InvalidDataset(format!(
                "node-classification dataset must hold exactly one graph, found {}",
                self.graphs.len()
            )));
        }
        for (i, g) in self.graphs.iter().enumerate() {
            g.validate()
                .map_err(|e| Error::InvalidDataset(format!("graph {i}: {e}")))?;
            if g.feature_dim() != self.feature_dim {
                return Err(Error::InvalidDataset(format!(
                    "graph {i} has feature dimension {} instead of {}",
                    g.feature_dim(),
                    self.feature_dim
                )));
            }
        }
        if let Some(s) = &self.splits {
            let n = self.num_items();
            let mut seen = HashSet::new();
            for (name, idx) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                for &i in idx {
                    if i >= n {
                        return Err(Error::InvalidDataset(format!("{name} split index {i} >= {n}")));
                    }
                    if !seen.insert(i) {
                        return Err(Error::InvalidDataset(format!("index {i} appears in two splits")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn ba_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    // preferential attachment with one edge per new node, seeded by a single edge
    let mut pairs = vec![(0, 1)];
    let mut endpoints = vec![0, 1];
    for new in 2..n {
        let target = endpoints[rng.random_range(0..endpoints.len())];
        pairs.push((target, new));
        endpoints.push(target);
        endpoints.push(new);
    }
    pairs
}

/// House: a square `0-1-2-3` with roof node `4` on `0` and `1`.
pub fn house_motif() -> Vec<(usize, usize)> {
    vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]
}

pub fn cycle_motif(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

/// 3×3 grid, nodes numbered row-major.
pub fn grid_motif() -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for r in 0..3 {
        for c in 0..3 {
            let id = 3 * r + c;
            if c < 2 {
                pairs.push((id, id + 1));
            }
            if r < 2 {
                pairs.push((id, id + 3));
            }
        }
    }
    pairs
}

fn shift(pairs: &[(usize, usize)], by: usize) -> Vec<(usize, usize)> {
    pairs.iter().map(|&(u, v)| (u + by, v + by)).collect()
}

/// BA2Motifs: balanced house (category 0) and five-cycle (category 1)
/// motifs on 20-node preferential-attachment trees.
pub fn generate_ba2motifs(n_graphs: usize, seed: u64) -> Result<Dataset> {
    if n_graphs == 0 || !n_graphs.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "BA2Motifs needs a positive even graph count, got {n_graphs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for i in 0..n_graphs {
        let label = usize::from(i >= n_graphs / 2);
        let motif = if label == 0 { house_motif() } else { cycle_motif(5) };
        let base = ba_tree(BA_BASE_NODES, &mut rng);
        let motif = shift(&motif, BA_BASE_NODES);
        let anchor = rng.random_range(0..BA_BASE_NODES);
        let mut pairs = base;
        pairs.extend_from_slice(&motif);
        pairs.push((anchor, BA_BASE_NODES));
        let n = BA_BASE_NODES + 5;
        let mut g = Graph::with_unit_features(n, GENERATED_FEATURE_DIM, &pairs)?;
        g.set_gt_edges(&motif)?;
        g.graph_label = Some(label);
        graphs.push(g);
    }
    let mut ds = Dataset {
        name: "ba2motifs".into(),
        task: Task::Graph,
        feature_dim: GENERATED_FEATURE_DIM,
        graphs,
        splits: None,
    };
    // too few graphs to split three ways: left unsplit
    if n_graphs >= 3 {
        split_dataset(&mut ds, (0.8, 0.1, 0.1), seed)?;
    }
    Ok(ds)
}

fn tree_with_motifs(name: &str, motif: &[(usize, usize)], motif_size: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree_nodes = (1usize << (TREE_DEPTH + 1)) - 1;
    let mut pairs: Vec<(usize, usize)> = (1..tree_nodes).map(|c| ((c - 1) / 2, c)).collect();

    let mut anchors: Vec<usize> = (0..tree_nodes).collect();
    anchors.shuffle(&mut rng);
    anchors.truncate(TREE_MOTIFS);

    let mut gt = Vec::new();
    for (m, &anchor) in anchors.iter().enumerate() {
        let offset = tree_nodes + m * motif_size;
        let shifted = shift(motif, offset);
        pairs.extend_from_slice(&shifted);
        gt.extend_from_slice(&shifted);
        pairs.push((anchor, offset));
    }
    let n = tree_nodes + TREE_MOTIFS * motif_size;
    let mut g = Graph::with_unit_features(n, GENERATED_FEATURE_DIM, &pairs)?;
    g.set_gt_edges(&gt)?;
    g.node_labels = Some((0..n).map(|i| usize::from(i >= tree_nodes)).collect());
    let mut ds = Dataset {
        name: name.into(),
        task: Task::Node,
        feature_dim: GENERATED_FEATURE_DIM,
        graphs: vec![g],
        splits: None,
    };
    split_dataset(&mut ds, (0.8, 0.1, 0.1), seed)?;
    Ok(ds)
}

/// Balanced binary tree of depth 8 with 80 six-cycles attached.
pub fn generate_tree_cycle(seed: u64) -> Result<Dataset> {
    tree_with_motifs("tree-cycle", &cycle_motif(6), 6, seed)
}

/// Balanced binary tree of depth 8 with 80 3×3 grids attached.
pub fn generate_tree_grid(seed: u64) -> Result<Dataset> {
    tree_with_motifs("tree-grid", &grid_motif(), 9, seed)
}

/// Generates a dataset by name: `ba2motifs`, `tree-cycle` or `tree-grid`.
pub fn generate(name: &str, seed: u64, n_graphs: Option<usize>) -> Result<Dataset> {
    match name {
        "ba2motifs" => generate_ba2motifs(n_graphs.unwrap_or(1000), seed),
        "tree-cycle" => generate_tree_cycle(seed),
        "tree-grid" => generate_tree_grid(seed),
        other => Err(Error::InvalidConfig(format!(
            "unknown dataset {other:?} (expected ba2motifs, tree-cycle or tree-grid)"
        ))),
    }
}

fn partition_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize) {
    let val = (ratios.1 * n as f64 + 1e-9).floor() as usize;
    let test = (ratios.2 * n as f64 + 1e-9).floor() as usize;
    (val, test)
}

/// Seeded shuffle and contiguous partition. Validation and test sizes are
/// floored; the remainder goes to training. Node tasks are stratified by
/// label so that every split sees every category.
pub fn split_dataset(ds: &mut Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<()> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let n = ds.num_items();
    if n < 3 {
        return Err(Error::InvalidDataset(format!("cannot split {n} items three ways")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let strata: Vec<Vec<usize>> = match (ds.task, ds.labels()) {
        (Task::Node, Some(labels)) => {
            let k = labels.iter().copied().max().map_or(0, |m| m + 1);
            let mut strata = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                strata[l].push(i);
            }
            strata.retain(|s| !s.is_empty());
            strata
        }
        _ => vec![(0..n).collect()],
    };

    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let stratified = strata.len() > 1;
    for mut items in strata {
        items.shuffle(&mut rng);
        let (mut nv, mut nt) = partition_sizes(items.len(), ratios);
        if stratified && items.len() >= 3 {
            nv = nv.max(1);
            nt = nt.max(1);
        }
        let nr = items.len() - nv - nt;
        splits.train.extend_from_slice(&items[..nr]);
        splits.val.extend_from_slice(&items[nr..nr + nv]);
        splits.test.extend_from_slice(&items[nr + nv..]);
    }
    ds.splits = Some(splits);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    name: String,
    task: Task,
    feature_dim: usize,
    graphs: Vec<GraphFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    splits: Option<Splits>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    num_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_edges: Option<Vec<[usize; 2]>>,
}

fn schema(path: String, message: impl Into<String>) -> Error {
    Error::Schema {
        path,
        message: message.into(),
    }
}

fn graph_from_file(gi: usize, gf: GraphFile, feature_dim: usize) -> Result<Graph> {
    let at = |field: &str| format!("graphs[{gi}].{field}");
    let n = gf.num_nodes;
    for (ei, &[u, v]) in gf.edges.iter().enumerate() {
        if u >= n || v >= n {
            return Err(schema(
                format!("graphs[{gi}].edges[{ei}]"),
                format!("dangling edge [{u}, {v}] on a {n}-node graph"),
            ));
        }
    }
    let features = match gf.features {
        None => Tensor::ones((n, feature_dim)),
        Some(rows) => {
            if rows.len() != n {
                return Err(schema(at("features"), format!("{} rows for {n} nodes", rows.len())));
            }
            let mut t = Tensor::zeros((n, feature_dim));
            for (r, row) in rows.iter().enumerate() {
                if row.len() != feature_dim {
                    return Err(schema(
                        format!("graphs[{gi}].features[{r}]"),
                        format!("{} values, expected {feature_dim}", row.len()),
                    ));
                }
                for (c, &x) in row.iter().enumerate() {
                    t[[r, c]] = x;
                }
            }
            t
        }
    };
    let pairs: Vec<(usize, usize)> = gf.edges.iter().map(|&[u, v]| (u, v)).collect();
    let mut g = Graph::from_undirected(n, features, &pairs).map_err(|e| schema(at("edges"), e.to_string()))?;
    if let Some(gt) = gf.gt_edges {
        let gt: Vec<(usize, usize)> = gt.iter().map(|&[u, v]| (u, v)).collect();
        g.set_gt_edges(&gt).map_err(|e| schema(at("gt_edges"), e.to_string()))?;
    }
    if let Some(labels) = gf.node_labels {
        if labels.len() != n {
            return Err(schema(at("node_labels"), format!("{} labels for {n} nodes", labels.len())));
        }
        g.node_labels = Some(labels);
    }
    g.graph_label = gf.graph_label;
    Ok(g)
}

fn graph_to_file(g: &Graph) -> GraphFile {
    let undirected = g.undirected_edges();
    let first_direction = |e: &crate::graph::UndirectedEdge| {
        let (u, v) = g.edges[e.directed[0]];
        [u, v]
    };
    let all_ones = g.features.iter().all(|&x| x == 1.0);
    GraphFile {
        num_nodes: g.num_nodes,
        features: (!all_ones).then(|| g.features.rows().into_iter().map(|r| r.to_vec()).collect()),
        edges: undirected.iter().map(first_direction).collect(),
        graph_label: g.graph_label,
        node_labels: g.node_labels.clone(),
        gt_edges: g.gt_edge_mask.as_ref().map(|m| {
            undirected
                .iter()
                .filter(|e| m[e.directed[0]])
                .map(first_direction)
                .collect()
        }),
    }
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: DatasetFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    let graphs = file
        .graphs
        .into_iter()
        .enumerate()
        .map(|(i, g)| graph_from_file(i, g, file.feature_dim))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        name: file.name,
        task: file.task,
        feature_dim: file.feature_dim,
        graphs,
        splits: file.splits,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    let file = DatasetFile {
        name: ds.name.clone(),
        task: ds.task,
        feature_dim: ds.feature_dim,
        graphs: ds.graphs.iter().map(graph_to_file).collect(),
        splits: ds.splits.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_json(ds)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_sequence;
    use std::collections::VecDeque;

    fn connected(g: &Graph) -> bool {
        let mut adj = vec![Vec::new(); g.num_nodes];
        for &(u, v) in &g.edges {
            adj[u].push(v);
        }
        let mut seen = vec![false; g.num_nodes];
        let mut q = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    fn gt_undirected(g: &Graph) -> usize {
        g.gt_edge_mask.as_ref().unwrap().iter().filter(|&&b| b).count() / 2
    }

    #[test]
    fn ba2motifs_shape() {
        let ds = generate_ba2motifs(40, 3).unwrap();
        assert_eq!(ds.graphs.len(), 40);
        for g in &ds.graphs {
            assert_eq!(g.num_nodes, 25);
            assert_eq!(g.feature_dim(), 10);
            assert!(connected(g));
            let want = if g.graph_label == Some(0) { 6 } else { 5 };
            assert_eq!(gt_undirected(g), want);
            // 19 tree edges + motif + bridge
            assert_eq!(g.num_edges(), 2 * (19 + want + 1));
        }
        let ones = ds.graphs.iter().filter(|g| g.graph_label == Some(1)).count();
        assert_eq!(ones, 20);
    }

    #[test]
    fn ba2motifs_rejects_odd() {
        assert!(generate_ba2motifs(7, 0).is_err());
    }

    #[test]
    fn ba2motifs_determinism() {
        let a = generate_ba2motifs(20, 11).unwrap();
        let b = generate_ba2motifs(20, 11).unwrap();
        let c = generate_ba2motifs(20, 12).unwrap();
        assert_eq!(a, b);
        let edges = |d: &Dataset| d.graphs.iter().map(|g| g.edges.clone()).collect::<Vec<_>>();
        assert_ne!(edges(&a), edges(&c));
    }

    #[test]
    fn tree_cycle_counts() {
        let ds = generate_tree_cycle(0).unwrap();
        let g = &ds.graphs[0];
        assert_eq!(g.num_nodes, 511 + 80 * 6);
        let labels = g.node_labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 480);
        assert_eq!(gt_undirected(g), 480);
        assert!(connected(g));
        assert_eq!(ds.task, Task::Node);
    }

    #[test]
    fn tree_grid_motif_degrees() {
        let ds = generate_tree_grid(1).unwrap();
        let g = &ds.graphs[0];
        assert_eq!(g.num_nodes, 511 + 80 * 9);
        assert!(connected(g));
        let mask = g.gt_edge_mask.clone().unwrap();
        let mut deg = vec![0usize; g.num_nodes];
        for (&(u, _), &m) in g.edges.iter().zip(&mask) {
            if m {
                deg[u] += 1;
            }
        }
        for (u, d) in deg.iter().enumerate().skip(511) {
            assert!((2..=4).contains(d), "node {u} has motif degree {d}");
        }
        let seq = degree_sequence(g, &mask).unwrap();
        assert_eq!(seq.iter().filter(|&&d| d == 0).count(), 511);
    }

    #[test]
    fn split_sizes() {
        let mut ds = generate_ba2motifs(1000, 0).unwrap();
        split_dataset(&mut ds, (0.8, 0.1, 0.1), 5).unwrap();
        let s = ds.splits.clone().unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (800, 100, 100));

        let mut small = generate_ba2motifs(10, 0).unwrap();
        split_dataset(&mut small, (0.8, 0.1, 0.1), 5).unwrap();
        let s2 = small.splits.clone().unwrap();
        assert_eq!((s2.train.len(), s2.val.len(), s2.test.len()), (8, 1, 1));

        let mut again = generate_ba2motifs(10, 0).unwrap();
        split_dataset(&mut again, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!(again.splits, small.splits);
        small.validate().unwrap();
    }

    #[test]
    fn split_errors() {
        let mut ds = generate_ba2motifs(2, 0).unwrap();
        assert!(split_dataset(&mut ds, (0.8, 0.1, 0.1), 0).is_err());
        let mut ds = generate_ba2motifs(10, 0).unwrap();
        assert!(split_dataset(&mut ds, (0.8, 0.3, 0.1), 0).is_err());
    }

    #[test]
    fn node_splits_are_stratified() {
        let ds = generate_tree_cycle(0).unwrap();
        let labels = ds.labels().unwrap();
        let s = ds.splits().unwrap();
        for split in [&s.train, &s.val, &s.test] {
            assert!(split.iter().any(|&i| labels[i] == 0));
            assert!(split.iter().any(|&i| labels[i] == 1));
        }
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 991);
    }

    #[test]
    fn minimal_file_loads() {
        let text = r#"{"name":"tiny","task":"graph","feature_dim":2,
            "graphs":[{"num_nodes":2,"edges":[[0,1]]}]}"#;
        let ds = dataset_from_json(text).unwrap();
        assert_eq!(ds.graphs.len(), 1);
        assert_eq!(ds.graphs[0].edges, vec![(0, 1), (1, 0)]);
        assert_eq!(ds.graphs[0].features, Tensor::ones((2, 2)));
    }

    #[test]
    fn dangling_edge_reports_path() {
        let text = r#"{"name":"bad","task":"graph","feature_dim":1,
            "graphs":[{"num_nodes":3,"edges":[[0,1],[0,5]]}]}"#;
        match dataset_from_json(text) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "graphs[0].edges[1]"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_violation_reports_path() {
        let text = r#"{"name":"bad","task":"graph","feature_dim":1,
            "graphs":[{"num_nodes":"three","edges":[]}]}"#;
        match dataset_from_json(text) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "graphs[0].num_nodes"),
            other => panic!("expected schema error, got {other:?}"),
        }
        let unknown = r#"{"name":"x","task":"graph","feature_dim":1,"graphs":[],"extra":1}"#;
        assert!(matches!(dataset_from_json(unknown), Err(Error::Schema { .. })));
    }

    #[test]
    fn gt_edge_not_in_graph_rejected() {
        let text = r#"{"name":"bad","task":"graph","feature_dim":1,
            "graphs":[{"num_nodes":3,"edges":[[0,1]],"gt_edges":[[1,2]]}]}"#;
        assert!(matches!(dataset_from_json(text), Err(Error::Schema { .. })));
    }

    #[test]
    fn round_trip_is_identity() {
        for ds in [generate_ba2motifs(6, 2).unwrap(), generate_tree_grid(4).unwrap()] {
            let text = dataset_to_json(&ds).unwrap();
            let back = dataset_from_json(&text).unwrap();
            assert_eq!(back, ds);
            assert_eq!(dataset_to_json(&back).unwrap(), text);
        }
        let mut g = Graph::from_undirected(3, ndarray::array![[0.5], [1.0], [-2.0]], &[(2, 0), (1, 2)]).unwrap();
        g.graph_label = Some(1);
        let ds = Dataset {
            name: "feat".into(),
            task: Task::Graph,
            feature_dim: 1,
            graphs: vec![g],
            splits: None,
        };
        assert_eq!(dataset_from_json(&dataset_to_json(&ds).unwrap()).unwrap(), ds);
    }
}
