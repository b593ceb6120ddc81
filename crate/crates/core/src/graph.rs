//! Graph containers, batching, spectral features and neighbourhoods.

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

use ndarray::Array2;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// An undirected attributed graph. Each undirected edge is stored in both
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    pub features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub graph_label: Option<usize>,
    pub node_labels: Option<Vec<usize>>,
    /// `true` on edges of the planted motif.
    pub gt_edge_mask: Option<Vec<bool>>,
}

impl Graph {
    /// Builds a graph from undirected pairs; each pair `(u, v)` is stored as
    /// `(u, v)` followed by `(v, u)`. Self-loops are stored once.
    pub fn from_undirected(num_nodes: usize, features: Tensor, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        for &(u, v) in pairs {
            edges.push((u, v));
            if u != v {
                edges.push((v, u));
            }
        }
        let g = Self {
            num_nodes,
            features,
            edges,
            graph_label: None,
            node_labels: None,
            gt_edge_mask: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Graph with constant unit features of width `dim`.
    pub fn with_unit_features(num_nodes: usize, dim: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::from_undirected(num_nodes, Tensor::ones((num_nodes, dim)), pairs)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Marks the given undirected pairs (in either orientation) as motif edges.
    pub fn set_gt_edges(&mut self, pairs: &[(usize, usize)]) -> Result<()> {
        let index = self.edge_index();
        let mut mask = vec![false; self.edges.len()];
        for &(u, v) in pairs {
            let fwd = index.get(&(u, v)).copied();
            let bwd = index.get(&(v, u)).copied();
            match (fwd, bwd) {
                (Some(a), Some(b)) => {
                    mask[a] = true;
                    mask[b] = true;
                }
                _ => {
                    return Err(Error::InvalidGraph(format!(
                        "ground-truth edge ({u}, {v}) is not an edge of the graph"
                    )))
                }
            }
        }
        self.gt_edge_mask = Some(mask);
        Ok(())
    }

    fn edge_index(&self) -> HashMap<(usize, usize), usize> {
        self.edges.iter().enumerate().map(|(i, &e)| (e, i)).collect()
    }

    /// For each stored edge, the index of its reverse.
    pub fn reverse_edge_index(&self) -> Result<Vec<usize>> {
        let index = self.edge_index();
        self.edges
            .iter()
            .map(|&(u, v)| {
                index
                    .get(&(v, u))
                    .copied()
                    .ok_or_else(|| Error::InvalidGraph(format!("edge ({u}, {v}) has no reverse")))
            })
            .collect()
    }

    /// Canonical undirected edges `(u, v)` with `u <= v`, each with the
    /// indices of its stored directions, in order of first appearance.
    pub fn undirected_edges(&self) -> Vec<UndirectedEdge> {
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out: Vec<UndirectedEdge> = Vec::new();
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            let key = (u.min(v), u.max(v));
            match slot.get(&key) {
                Some(&s) => out[s].directed.push(i),
                None => {
                    slot.insert(key, out.len());
                    out.push(UndirectedEdge {
                        u: key.0,
                        v: key.1,
                        directed: vec![i],
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.num_nodes {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {} nodes",
                self.features.nrows(),
                self.num_nodes
            )));
        }
        let mut seen = HashMap::with_capacity(self.edges.len());
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            if u >= self.num_nodes || v >= self.num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge {i} = ({u}, {v}) references a node >= {}",
                    self.num_nodes
                )));
            }
            if seen.insert((u, v), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u}, {v})")));
            }
        }
        for &(u, v) in &self.edges {
            if !seen.contains_key(&(v, u)) {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) has no reverse")));
            }
        }
        if let Some(labels) = &self.node_labels {
            if labels.len() != self.num_nodes {
                return Err(Error::InvalidGraph("node label count differs from node count".into()));
            }
        }
        if let Some(mask) = &self.gt_edge_mask {
            check_symmetric_mask(self, mask)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedEdge {
    pub u: usize,
    pub v: usize,
    pub directed: Vec<usize>,
}

fn check_symmetric_mask(g: &Graph, mask: &[bool]) -> Result<()> {
    if mask.len() != g.edges.len() {
        return Err(Error::InvalidGraph(format!(
            "edge mask has {} entries for {} edges",
            mask.len(),
            g.edges.len()
        )));
    }
    let rev = g.reverse_edge_index()?;
    if let Some(i) = (0..mask.len()).find(|&i| mask[i] != mask[rev[i]]) {
        let (u, v) = g.edges[i];
        return Err(Error::InvalidGraph(format!("edge mask is asymmetric at ({u}, {v})")));
    }
    Ok(())
}

/// Disjoint union of graphs, processed as one large graph.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub graph: Graph,
    pub node_to_graph: Rc<[usize]>,
    pub graph_offsets: Vec<usize>,
    /// Start of each member graph's edges in `graph.edges`.
    pub edge_offsets: Vec<usize>,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.graph_offsets.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.graph.edges.len()
    }

    /// Node range of member graph `i`.
    pub fn node_range(&self, i: usize) -> std::ops::Range<usize> {
        let end = self.graph_offsets.get(i + 1).copied().unwrap_or(self.graph.num_nodes);
        self.graph_offsets[i]..end
    }

    /// Edge range of member graph `i`.
    pub fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        let end = self.edge_offsets.get(i + 1).copied().unwrap_or(self.graph.edges.len());
        self.edge_offsets[i]..end
    }
}

pub fn batch_graphs<G: std::borrow::Borrow<Graph>>(graphs: &[G]) -> Result<GraphBatch> {
    let Some(first) = graphs.first() else {
        return Err(Error::InvalidGraph("cannot batch zero graphs".into()));
    };
    let d = first.borrow().feature_dim();
    let total_nodes: usize = graphs.iter().map(|g| g.borrow().num_nodes).sum();
    let total_edges: usize = graphs.iter().map(|g| g.borrow().edges.len()).sum();

    let mut features = Array2::zeros((total_nodes, d));
    let mut edges = Vec::with_capacity(total_edges);
    let mut node_to_graph = Vec::with_capacity(total_nodes);
    let mut graph_offsets = Vec::with_capacity(graphs.len());
    let mut edge_offsets = Vec::with_capacity(graphs.len());
    let mut gt = Vec::with_capacity(total_edges);
    let mut any_gt = false;
    let mut node_labels = Vec::with_capacity(total_nodes);
    let mut all_node_labels = true;

    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        let g = g.borrow();
        if g.feature_dim() != d {
            return Err(Error::InvalidGraph(format!(
                "graph {gi} has feature dimension {} but the batch uses {d}",
                g.feature_dim()
            )));
        }
        graph_offsets.push(offset);
        edge_offsets.push(edges.len());
        features
            .slice_mut(ndarray::s![offset..offset + g.num_nodes, ..])
            .assign(&g.features);
        edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        node_to_graph.extend(std::iter::repeat_n(gi, g.num_nodes));
        match &g.gt_edge_mask {
            Some(m) => {
                any_gt = true;
                gt.extend_from_slice(m);
            }
            None => gt.extend(std::iter::repeat_n(false, g.edges.len())),
        }
        match &g.node_labels {
            Some(l) => node_labels.extend_from_slice(l),
            None => all_node_labels = false,
        }
        offset += g.num_nodes;
    }

    let src: Rc<[usize]> = edges.iter().map(|e| e.0).collect();
    let dst: Rc<[usize]> = edges.iter().map(|e| e.1).collect();
    let graph = Graph {
        num_nodes: total_nodes,
        features,
        edges,
        graph_label: None,
        node_labels: all_node_labels.then_some(node_labels),
        gt_edge_mask: any_gt.then_some(gt),
    };
    Ok(GraphBatch {
        graph,
        node_to_graph: node_to_graph.into(),
        graph_offsets,
        edge_offsets,
        src,
        dst,
    })
}

/// Symmetric normalised Laplacian `I - D^-1/2 A D^-1/2`. Isolated nodes get
/// diagonal 1 and no off-diagonal entries.
pub fn normalized_laplacian(g: &Graph) -> Tensor {
    let n = g.num_nodes;
    let mut adj = Tensor::zeros((n, n));
    for &(u, v) in &g.edges {
        adj[[u, v]] = 1.0;
        adj[[v, u]] = 1.0;
    }
    let deg: Vec<f64> = adj.rows().into_iter().map(|r| r.sum()).collect();
    let mut lap = Tensor::eye(n);
    for u in 0..n {
        for v in 0..n {
            if adj[[u, v]] != 0.0 && deg[u] > 0.0 && deg[v] > 0.0 {
                lap[[u, v]] -= adj[[u, v]] / (deg[u] * deg[v]).sqrt();
            }
        }
    }
    lap
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &Tensor) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, run
/// until the off-diagonal Frobenius norm drops below `1e-10`.
pub fn jacobi_eigenvalues(m: &Tensor) -> Result<Vec<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::ShapeMismatch {
            op: "jacobi_eigenvalues",
            lhs: m.shape().to_vec(),
            rhs: vec![n, n],
        });
    }
    let asym = asymmetry(m);
    if asym > 1e-9 {
        return Err(Error::NotSymmetric(asym));
    }
    let mut a = m.clone();
    // symmetrise away sub-tolerance noise
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = avg;
            a[[j, i]] = avg;
        }
    }
    let off_norm = |a: &Tensor| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[[i, j]] * a[[i, j]];
                }
            }
        }
        s.sqrt()
    };

    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&a) < 1e-10 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    Ok((0..n).map(|i| a[[i, i]]).collect())
}

/// The `k` largest eigenvalues in descending order, zero-padded when the
/// matrix has fewer than `k` rows.
pub fn top_k_eigenvalues(m: &Tensor, k: usize) -> Result<Vec<f64>> {
    let mut ev = jacobi_eigenvalues(m)?;
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.resize(k.max(ev.len()), 0.0);
    ev.truncate(k);
    Ok(ev)
}

/// Induced subgraph around a centre node.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: Graph,
    /// New index → original index.
    pub nodes: Vec<usize>,
    /// Original index → new index.
    pub old_to_new: HashMap<usize, usize>,
    /// New edge index → original edge index.
    pub edge_ids: Vec<usize>,
}

impl Subgraph {
    pub fn center(&self, original: usize) -> Option<usize> {
        self.old_to_new.get(&original).copied()
    }
}

fn adjacency_lists(g: &Graph) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); g.num_nodes];
    for &(u, v) in &g.edges {
        adj[u].push(v);
    }
    adj
}

/// Induced subgraph on every node within `k` hops of `node`. Nodes keep
/// their BFS discovery order, so the centre is always node 0.
pub fn k_hop_neighborhood(g: &Graph, node: usize, k: usize) -> Result<Subgraph> {
    k_hop_with_adjacency(g, &adjacency_lists(g), node, k)
}

pub(crate) fn k_hop_with_adjacency(g: &Graph, adj: &[Vec<usize>], node: usize, k: usize) -> Result<Subgraph> {
    if node >= g.num_nodes {
        return Err(Error::InvalidGraph(format!(
            "centre node {node} out of range for {} nodes",
            g.num_nodes
        )));
    }
    let mut old_to_new = HashMap::new();
    let mut nodes = vec![node];
    old_to_new.insert(node, 0);
    let mut queue = VecDeque::from([(node, 0usize)]);
    while let Some((u, depth)) = queue.pop_front() {
        if depth == k {
            continue;
        }
        for &v in &adj[u] {
            if let std::collections::hash_map::Entry::Vacant(e) = old_to_new.entry(v) {
                e.insert(nodes.len());
                nodes.push(v);
                queue.push_back((v, depth + 1));
            }
        }
    }
    let mut edges = Vec::new();
    let mut edge_ids = Vec::new();
    let mut gt = Vec::new();
    for (i, &(u, v)) in g.edges.iter().enumerate() {
        if let (Some(&a), Some(&b)) = (old_to_new.get(&u), old_to_new.get(&v)) {
            edges.push((a, b));
            edge_ids.push(i);
            if let Some(m) = &g.gt_edge_mask {
                gt.push(m[i]);
            }
        }
    }
    let features = g.features.select(ndarray::Axis(0), &nodes);
    let graph = Graph {
        num_nodes: nodes.len(),
        features,
        edges,
        graph_label: g.graph_label,
        node_labels: g
            .node_labels
            .as_ref()
            .map(|l| nodes.iter().map(|&n| l[n]).collect()),
        gt_edge_mask: g.gt_edge_mask.as_ref().map(|_| gt),
    };
    Ok(Subgraph {
        graph,
        nodes,
        old_to_new,
        edge_ids,
    })
}

/// Ascending degree sequence over all nodes, counting only masked edges.
pub fn degree_sequence(g: &Graph, edge_mask: &[bool]) -> Result<Vec<usize>> {
    check_symmetric_mask(g, edge_mask)?;
    let mut deg = vec![0usize; g.num_nodes];
    for (&(u, _), &keep) in g.edges.iter().zip(edge_mask) {
        if keep {
            deg[u] += 1;
        }
    }
    deg.sort_unstable();
    Ok(deg)
}
