//! Encoder, edge selector, watchman head and augmented-view construction.
//!
//! The encoder is a three-layer GIN whose messages are scaled by per-edge
//! weights, so a zero weight is exactly an edge deletion. The selector
//! scores edges (graph task) or nodes (node task) from raw-pass node
//! embeddings; Gumbel sampling turns scores into soft edge weights for two
//! positive views, and the negative view flips the first one.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, BatchNormState, BnContext, Mode, Tape, Tensor, Var};
use crate::datasets::Task;
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Graph, GraphBatch};

pub const EMBED_DIM: usize = 64;
pub const GIN_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

impl Linear {
    /// Uniform initialisation in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weight = Tensor::from_shape_simple_fn((fan_in, fan_out), &mut draw);
        let bias = Tensor::from_shape_simple_fn((1, fan_out), &mut draw);
        Self { weight, bias }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GinLayer {
    pub linear: Linear,
    pub bn: BatchNormState,
}

/// Two-layer scoring network. For edges the first layer acts on
/// `[z_u, z_v]`; its weight is kept as two blocks, `hidden_src` for `z_u`
/// and `hidden_dst` for `z_v`, so the product is computed per node once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    pub hidden_src: Tensor,
    pub hidden_dst: Option<Tensor>,
    pub hidden_bias: Tensor,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub task: Task,
    pub input_dim: usize,
    pub gin: Vec<GinLayer>,
    pub selector: Selector,
    pub watchman: Vec<Linear>,
    pub dropout: f64,
    pub tau: f64,
    pub eigen_k: usize,
    #[serde(default)]
    pub detach_selector_input: bool,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub task: Task,
    pub input_dim: usize,
    pub dropout: f64,
    pub tau: f64,
    pub eigen_k: usize,
    pub detach_selector_input: bool,
}

impl ModelState {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = EMBED_DIM;
        let gin = (0..GIN_LAYERS)
            .map(|l| GinLayer {
                linear: Linear::new(if l == 0 { cfg.input_dim } else { d }, d, rng),
                bn: BatchNormState::new(d),
            })
            .collect();
        let fan_in = match cfg.task {
            Task::Graph => 2 * d,
            Task::Node => d,
        };
        let first = Linear::new(fan_in, d, rng);
        let (hidden_src, hidden_dst) = match cfg.task {
            Task::Graph => (
                first.weight.slice(ndarray::s![..d, ..]).to_owned(),
                Some(first.weight.slice(ndarray::s![d.., ..]).to_owned()),
            ),
            Task::Node => (first.weight, None),
        };
        let selector = Selector {
            hidden_src,
            hidden_dst,
            hidden_bias: first.bias,
            output: Linear::new(d, 1, rng),
        };
        let watchman = vec![
            Linear::new(d, d, rng),
            Linear::new(d, d, rng),
            Linear::new(d, cfg.eigen_k, rng),
        ];
        Self {
            task: cfg.task,
            input_dim: cfg.input_dim,
            gin,
            selector,
            watchman,
            dropout: cfg.dropout,
            tau: cfg.tau,
            eigen_k: cfg.eigen_k,
            detach_selector_input: cfg.detach_selector_input,
        }
    }

    /// Every learnable tensor in a fixed order shared with
    /// [`ModelState::params_mut`] and [`ModelVars::all`].
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.gin {
            out.extend([&l.linear.weight, &l.linear.bias, &l.bn.scale, &l.bn.shift]);
        }
        out.push(&self.selector.hidden_src);
        if let Some(h) = &self.selector.hidden_dst {
            out.push(h);
        }
        out.extend([&self.selector.hidden_bias, &self.selector.output.weight, &self.selector.output.bias]);
        for l in &self.watchman {
            out.extend([&l.weight, &l.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.gin {
            out.extend([&mut l.linear.weight, &mut l.linear.bias, &mut l.bn.scale, &mut l.bn.shift]);
        }
        let s = &mut self.selector;
        out.push(&mut s.hidden_src);
        if let Some(h) = &mut s.hidden_dst {
            out.push(h);
        }
        out.extend([&mut s.hidden_bias, &mut s.output.weight, &mut s.output.bias]);
        for l in &mut self.watchman {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GinVars {
    pub linear: LinearVars,
    pub scale: Var,
    pub shift: Var,
}

/// Tape leaves for every parameter of a [`ModelState`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub gin: Vec<GinVars>,
    pub sel_src: Var,
    pub sel_dst: Option<Var>,
    pub sel_bias: Var,
    pub sel_out: LinearVars,
    pub watchman: Vec<LinearVars>,
}

impl ModelVars {
    pub fn bind(tape: &mut Tape, state: &ModelState) -> Self {
        let lin = |tape: &mut Tape, l: &Linear| LinearVars {
            weight: tape.param(l.weight.clone()),
            bias: tape.param(l.bias.clone()),
        };
        let gin = state
            .gin
            .iter()
            .map(|l| {
                let linear = lin(tape, &l.linear);
                GinVars {
                    linear,
                    scale: tape.param(l.bn.scale.clone()),
                    shift: tape.param(l.bn.shift.clone()),
                }
            })
            .collect();
        let sel_src = tape.param(state.selector.hidden_src.clone());
        let sel_dst = state.selector.hidden_dst.as_ref().map(|h| tape.param(h.clone()));
        let sel_bias = tape.param(state.selector.hidden_bias.clone());
        let sel_out = lin(tape, &state.selector.output);
        let watchman = state.watchman.iter().map(|l| lin(tape, l)).collect();
        Self {
            gin,
            sel_src,
            sel_dst,
            sel_bias,
            sel_out,
            watchman,
        }
    }

    /// Same order as [`ModelState::params`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for g in &self.gin {
            out.extend([g.linear.weight, g.linear.bias, g.scale, g.shift]);
        }
        out.push(self.sel_src);
        out.extend(self.sel_dst);
        out.extend([self.sel_bias, self.sel_out.weight, self.sel_out.bias]);
        for l in &self.watchman {
            out.extend([l.weight, l.bias]);
        }
        out
    }
}

fn linear(tape: &mut Tape, x: Var, l: LinearVars) -> Result<Var> {
    let y = tape.matmul(x, l.weight)?;
    tape.add_row(y, l.bias)
}

fn check_weights(tape: &Tape, w: Var, n_edges: usize) -> Result<()> {
    let v = tape.value(w);
    if v.nrows() != n_edges || v.ncols() != 1 {
        return Err(Error::ShapeMismatch {
            op: "embed_nodes",
            lhs: vec![n_edges, 1],
            rhs: v.shape().to_vec(),
        });
    }
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
        return Err(Error::WeightOutOfRange { index, value });
    }
    Ok(())
}

/// Node embeddings `|V| × 64`: per layer
/// `h' = dropout(ReLU(BN_ctx(Linear(h_u + Σ_v w_vu h_v))))`.
#[allow(clippy::too_many_arguments)]
pub fn embed_nodes<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ModelVars,
    state: &mut ModelState,
    batch: &GraphBatch,
    edge_weights: Var,
    context: BnContext,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    check_weights(tape, edge_weights, batch.num_edges())?;
    let mut h = tape.constant(batch.graph.features.clone());
    for (layer, gv) in state.gin.iter_mut().zip(&vars.gin) {
        let agg = tape.aggregate(h, edge_weights, batch.src.clone(), batch.dst.clone())?;
        let s = tape.add(h, agg)?;
        let lin = linear(tape, s, gv.linear)?;
        let bn = tape.batch_norm(lin, gv.scale, gv.shift, &mut layer.bn, context, mode)?;
        let a = tape.relu(bn);
        h = tape.dropout(a, state.dropout, mode, rng);
    }
    Ok(h)
}

/// Mean-pooled graph embeddings `N × 64`.
pub fn pool_graphs(tape: &mut Tape, batch: &GraphBatch, node_emb: Var) -> Result<Var> {
    tape.segment_mean(node_emb, batch.node_to_graph.clone(), batch.num_graphs())
}

#[allow(clippy::too_many_arguments)]
pub fn embed_graphs<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ModelVars,
    state: &mut ModelState,
    batch: &GraphBatch,
    edge_weights: Var,
    context: BnContext,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let z = embed_nodes(tape, vars, state, batch, edge_weights, context, mode, rng)?;
    pool_graphs(tape, batch, z)
}

fn selector_input(tape: &mut Tape, state: &ModelState, z: Var) -> Var {
    if state.detach_selector_input {
        tape.constant(tape.value(z).clone())
    } else {
        z
    }
}

fn selector_head(tape: &mut Tape, vars: &ModelVars, pre: Var) -> Result<Var> {
    let pre = tape.add_row(pre, vars.sel_bias)?;
    let hidden = tape.relu(pre);
    let logits = linear(tape, hidden, vars.sel_out)?;
    let p = tape.sigmoid(logits);
    Ok(tape.clamp_prob(p))
}

/// Keep probability per directed edge, `θ([z_u, z_v])`, clamped.
pub fn select_edges_graph(
    tape: &mut Tape,
    vars: &ModelVars,
    state: &ModelState,
    node_emb: Var,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
) -> Result<Var> {
    let sel_dst = vars
        .sel_dst
        .ok_or_else(|| Error::InvalidConfig("edge selector requires a graph-task model".into()))?;
    let z = selector_input(tape, state, node_emb);
    let a = tape.matmul(z, vars.sel_src)?;
    let b = tape.matmul(z, sel_dst)?;
    let a = tape.gather_rows(a, src)?;
    let b = tape.gather_rows(b, dst)?;
    let pre = tape.add(a, b)?;
    selector_head(tape, vars, pre)
}

/// Keep probability per node, `θ(z_u)`, clamped.
pub fn select_nodes(tape: &mut Tape, vars: &ModelVars, state: &ModelState, node_emb: Var) -> Result<Var> {
    let z = selector_input(tape, state, node_emb);
    let pre = tape.matmul(z, vars.sel_src)?;
    selector_head(tape, vars, pre)
}

/// Node-lifted edge weights: train mode samples `w_u = Gumbel(p_u)` and
/// returns `w_u · w_v`; eval mode returns `p_u · p_v`.
#[allow(clippy::too_many_arguments)]
pub fn select_edges_node<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ModelVars,
    state: &ModelState,
    node_emb: Var,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let p = select_nodes(tape, vars, state, node_emb)?;
    let w = match mode {
        Mode::Train => gumbel_weights(tape, p, state.tau, rng),
        Mode::Eval => p,
    };
    lift_node_weights(tape, w, src, dst)
}

pub fn lift_node_weights(tape: &mut Tape, node_w: Var, src: Rc<[usize]>, dst: Rc<[usize]>) -> Result<Var> {
    let a = tape.gather_rows(node_w, src)?;
    let b = tape.gather_rows(node_w, dst)?;
    tape.mul(a, b)
}

/// Logistic noise `ln α - ln(1 - α)` for `α ~ Uniform(0, 1)`.
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let a: f64 = rng.random();
        if a > 0.0 {
            return a.ln() - (1.0 - a).ln();
        }
    }
}

/// `Sigmoid((Logit(p) + ε) / τ)` with `ε = ln α - ln(1 - α)`.
pub fn gumbel_sample_with(p: f64, tau: f64, alpha: f64) -> f64 {
    let eps = alpha.ln() - (1.0 - alpha).ln();
    autodiff::sigmoid((autodiff::logit(p) + eps) / tau)
}

pub fn gumbel_sample<R: Rng + ?Sized>(p: f64, tau: f64, rng: &mut R) -> f64 {
    autodiff::sigmoid((autodiff::logit(p) + logistic_noise(rng)) / tau)
}

/// Differentiable Gumbel relaxation of a probability column; the noise is a
/// constant on the tape.
pub fn gumbel_weights<R: Rng + ?Sized>(tape: &mut Tape, p: Var, tau: f64, rng: &mut R) -> Var {
    let shape = tape.value(p).raw_dim();
    let noise = tape.constant(Tensor::from_shape_simple_fn(shape, || logistic_noise(rng)));
    let l = tape.logit(p);
    let shifted = tape.add(l, noise).expect("noise has the probability shape");
    let scaled = tape.scale(shifted, 1.0 / tau);
    tape.sigmoid(scaled)
}

/// Two positive views and the flipped negative view of a batch.
#[derive(Debug, Clone, Copy)]
pub struct Triplet {
    /// Selector output: per-edge keep probability (graph task) or
    /// per-node keep probability (node task).
    pub p: Var,
    pub w_plus1: Var,
    pub w_plus2: Var,
    pub w_minus: Var,
    pub z_plus1: Var,
    pub z_plus2: Var,
    pub z_minus: Var,
}

/// Raw pass → selector → two independent samplings → three augmented
/// passes. Rows of the `z` outputs are graphs (graph task) or nodes.
pub fn make_triplet<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ModelVars,
    state: &mut ModelState,
    batch: &GraphBatch,
    mode: Mode,
    rng: &mut R,
) -> Result<Triplet> {
    let ones = tape.constant(Tensor::ones((batch.num_edges(), 1)));
    let raw = embed_nodes(tape, vars, state, batch, ones, BnContext::Raw, mode, rng)?;

    let (p, w1, w2) = match state.task {
        Task::Graph => {
            let p = select_edges_graph(tape, vars, state, raw, batch.src.clone(), batch.dst.clone())?;
            let (w1, w2) = match mode {
                Mode::Train => (
                    gumbel_weights(tape, p, state.tau, rng),
                    gumbel_weights(tape, p, state.tau, rng),
                ),
                Mode::Eval => (p, p),
            };
            (p, w1, w2)
        }
        Task::Node => {
            let p = select_nodes(tape, vars, state, raw)?;
            let (n1, n2) = match mode {
                Mode::Train => (
                    gumbel_weights(tape, p, state.tau, rng),
                    gumbel_weights(tape, p, state.tau, rng),
                ),
                Mode::Eval => (p, p),
            };
            let w1 = lift_node_weights(tape, n1, batch.src.clone(), batch.dst.clone())?;
            let w2 = lift_node_weights(tape, n2, batch.src.clone(), batch.dst.clone())?;
            (p, w1, w2)
        }
    };
    let w_minus = tape.one_minus(w1);

    let view = |tape: &mut Tape, state: &mut ModelState, w: Var, rng: &mut R| -> Result<Var> {
        let z = embed_nodes(tape, vars, state, batch, w, BnContext::Augmented, mode, rng)?;
        match state.task {
            Task::Graph => pool_graphs(tape, batch, z),
            Task::Node => Ok(z),
        }
    };
    let z_plus1 = view(tape, state, w1, rng)?;
    let z_plus2 = view(tape, state, w2, rng)?;
    let z_minus = view(tape, state, w_minus, rng)?;
    Ok(Triplet {
        p,
        w_plus1: w1,
        w_plus2: w2,
        w_minus,
        z_plus1,
        z_plus2,
        z_minus,
    })
}

/// Watchman head `ψ`: three linear layers with ReLU between them.
pub fn watchman_forward(tape: &mut Tape, vars: &ModelVars, z: Var) -> Result<Var> {
    let mut h = z;
    let n = vars.watchman.len();
    for (i, l) in vars.watchman.iter().enumerate() {
        h = linear(tape, h, *l)?;
        if i + 1 < n {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

// eval passes draw no randomness; this only satisfies the signature
fn eval_rng() -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(0)
}

/// Deterministic inference output for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// One row per graph (graph task) or per node (node task).
    pub embeddings: Tensor,
    /// Per directed edge of the batch.
    pub edge_weights: Vec<f64>,
}

/// Eval-mode inference: weights are the selector's probabilities (lifted
/// to edges for node tasks) and the embedding is that of the weighted
/// augmented view.
pub fn infer_batch(state: &ModelState, batch: &GraphBatch) -> Result<Inference> {
    let mut st = state.clone();
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&mut tape, &st);
    let mut no_rng = eval_rng();
    let ones = tape.constant(Tensor::ones((batch.num_edges(), 1)));
    let raw = embed_nodes(&mut tape, &vars, &mut st, batch, ones, BnContext::Raw, Mode::Eval, &mut no_rng)?;
    let w = match st.task {
        Task::Graph => select_edges_graph(&mut tape, &vars, &st, raw, batch.src.clone(), batch.dst.clone())?,
        Task::Node => select_edges_node(
            &mut tape,
            &vars,
            &st,
            raw,
            batch.src.clone(),
            batch.dst.clone(),
            Mode::Eval,
            &mut no_rng,
        )?,
    };
    let z = embed_nodes(&mut tape, &vars, &mut st, batch, w, BnContext::Augmented, Mode::Eval, &mut no_rng)?;
    let z = match st.task {
        Task::Graph => pool_graphs(&mut tape, batch, z)?,
        Task::Node => z,
    };
    Ok(Inference {
        embeddings: tape.value(z).clone(),
        edge_weights: tape.value(w).iter().copied().collect(),
    })
}

/// Inference on a single graph.
pub fn infer(state: &ModelState, graph: &Graph) -> Result<Inference> {
    infer_batch(state, &batch_graphs(&[graph])?)
}

/// Eval-mode embedding of a batch under fixed edge weights, augmented
/// context. Rows follow the task as in [`Inference::embeddings`].
pub fn embed_with_weights(state: &ModelState, batch: &GraphBatch, weights: &[f64]) -> Result<Tensor> {
    let mut st = state.clone();
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&mut tape, &st);
    let mut no_rng = eval_rng();
    let w = tape.constant(Tensor::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("column"));
    let z = embed_nodes(&mut tape, &vars, &mut st, batch, w, BnContext::Augmented, Mode::Eval, &mut no_rng)?;
    let z = match st.task {
        Task::Graph => pool_graphs(&mut tape, batch, z)?,
        Task::Node => z,
    };
    Ok(tape.value(z).clone())
}
