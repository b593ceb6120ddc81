//! Tape-based reverse-mode differentiation over dense 2-D tensors.
//!
//! Every value lives on a [`Tape`] and is addressed by a [`Var`] handle.
//! Operations append a node recording their inputs; [`Tape::backward`]
//! walks the tape in reverse and accumulates `∂loss/∂node` for every node
//! that depends on a parameter leaf.
//!
//! All tensors are two-dimensional. Column vectors are `n×1`, scalars are
//! `1×1`. The engine only offers the broadcasting the model needs: a
//! `1×m` row added to every row, and an `n×1` column multiplied into every
//! column.
//!
//! ```
//! use ingenious_core::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[3.0]]);
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap()[[0, 0]], 6.0);
//! ```

use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Probability inputs to `logit` and to probability-domain logs are clamped
/// into `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

/// Norm floor used by row normalisation.
pub const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which running-statistics set a batch-norm call reads and updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnContext {
    Raw,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    fn new(width: usize) -> Self {
        Self {
            mean: Tensor::zeros((1, width)),
            var: Tensor::ones((1, width)),
        }
    }
}

/// Batch normalisation with one learnable affine transform and two
/// independent running-statistics sets, selected per call by [`BnContext`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub raw: RunningStats,
    pub augmented: RunningStats,
    pub scale: Tensor,
    pub shift: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            raw: RunningStats::new(width),
            augmented: RunningStats::new(width),
            scale: Tensor::ones((1, width)),
            shift: Tensor::zeros((1, width)),
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn width(&self) -> usize {
        self.scale.ncols()
    }

    pub fn stats(&self, context: BnContext) -> &RunningStats {
        match context {
            BnContext::Raw => &self.raw,
            BnContext::Augmented => &self.augmented,
        }
    }

    fn stats_mut(&mut self, context: BnContext) -> &mut RunningStats {
        match context {
            BnContext::Raw => &mut self.raw,
            BnContext::Augmented => &mut self.augmented,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Var, Var),
    Sigmoid(Var),
    Logit(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    RowNormalize(Var),
    SegmentSum(Var, Rc<[usize]>),
    SegmentMean(Var, Rc<[usize]>, Rc<[usize]>),
    GatherRows(Var, Rc<[usize]>),
    Dropout(Var, Tensor),
    Aggregate {
        h: Var,
        w: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Tensor,
        inv_std: Tensor,
        train: bool,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Single-owner recording of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(t: &Tensor) -> Vec<usize> {
    t.shape().to_vec()
}

fn clamp_prob(x: f64) -> f64 {
    x.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logit with the probability clamp applied to its input.
pub fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        shape(&self.nodes[v.0].value)
    }

    /// Gradient accumulated by the last [`Tape::backward`]; `None` if the
    /// node was not reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient, or zeros of the right shape for unreachable nodes.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.raw_dim()),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: shape(va),
                rhs: shape(vb),
            });
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `a (n×m) + row (1×m)`, the row added to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: shape(va),
                rhs: shape(vr),
            });
        }
        let out = va + vr;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `a (n×m) * col (n×1)`, the column multiplied into every column of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.ncols() != 1 || vc.nrows() != va.nrows() {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                lhs: shape(va),
                rhs: shape(vc),
            });
        }
        let out = va * vc;
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: shape(va),
                rhs: shape(vb),
            });
        }
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).expect("rows checked");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// `ln(p / (1 - p))` with `p` clamped into `[1e-6, 1 - 1e-6]`.
    pub fn logit(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(logit);
        let rg = self.rg(a);
        self.push(out, Op::Logit(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Natural log. Inputs below the smallest positive normal are floored;
    /// probability-domain callers clamp with [`Tape::clamp_prob`] first.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(f64::MIN_POSITIVE).ln());
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    pub fn clamp_prob(&mut self, a: Var) -> Var {
        self.clamp(a, PROB_EPS, 1.0 - PROB_EPS)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.len().max(1) as f64;
        let out = Tensor::from_elem((1, 1), v.sum() / n);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Row sums: `n×m → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    /// Scales each row to unit L2 norm; norms below `1e-12` are floored.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let mut floored = 0usize;
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n < NORM_FLOOR {
                floored += 1;
            }
            row /= n.max(NORM_FLOOR);
        }
        if floored > 0 {
            log::debug!("row_normalize: {floored} rows with norm below floor");
        }
        let rg = self.rg(a);
        self.push(out, Op::RowNormalize(a), rg)
    }

    fn check_segments(&self, op: &'static str, a: Var, seg: &[usize]) -> Result<()> {
        if seg.len() != self.value(a).nrows() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a),
                rhs: vec![seg.len()],
            });
        }
        Ok(())
    }

    /// Sums rows sharing a segment id: `n×m → n_segments×m`.
    pub fn segment_sum(&mut self, a: Var, seg: Rc<[usize]>, n_segments: usize) -> Result<Var> {
        self.check_segments("segment_sum", a, &seg)?;
        let va = self.value(a);
        let mut out = Tensor::zeros((n_segments, va.ncols()));
        for (row, &s) in va.rows().into_iter().zip(seg.iter()) {
            if s >= n_segments {
                return Err(Error::ShapeMismatch {
                    op: "segment_sum",
                    lhs: vec![s],
                    rhs: vec![n_segments],
                });
            }
            let mut o = out.row_mut(s);
            o += &row;
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentSum(a, seg), rg))
    }

    /// Means of rows sharing a segment id. Empty segments yield zero rows.
    pub fn segment_mean(&mut self, a: Var, seg: Rc<[usize]>, n_segments: usize) -> Result<Var> {
        self.check_segments("segment_mean", a, &seg)?;
        let va = self.value(a);
        let mut out = Tensor::zeros((n_segments, va.ncols()));
        let mut counts = vec![0usize; n_segments];
        for (row, &s) in va.rows().into_iter().zip(seg.iter()) {
            if s >= n_segments {
                return Err(Error::ShapeMismatch {
                    op: "segment_mean",
                    lhs: vec![s],
                    rhs: vec![n_segments],
                });
            }
            counts[s] += 1;
            let mut o = out.row_mut(s);
            o += &row;
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let mut o = out.row_mut(s);
                o /= c as f64;
            } else {
                log::warn!("segment_mean: segment {s} is empty, emitting zero row");
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMean(a, seg, counts.into()), rg))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.nrows()) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: shape(va),
                rhs: vec![bad],
            });
        }
        let out = va.select(Axis(0), &idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// Inverted dropout. `Mode::Eval` or a zero rate returns `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut R) -> Var {
        if mode == Mode::Eval || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let va = self.value(a);
        let mask = Tensor::from_shape_simple_fn(va.raw_dim(), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let out = va * &mask;
        let rg = self.rg(a);
        self.push(out, Op::Dropout(a, mask), rg)
    }

    /// Weighted neighbour sum: `out[dst[e]] += w[e] * h[src[e]]`.
    pub fn aggregate(&mut self, h: Var, w: Var, src: Rc<[usize]>, dst: Rc<[usize]>) -> Result<Var> {
        let (vh, vw) = (self.value(h), self.value(w));
        if src.len() != dst.len() || vw.nrows() != src.len() || vw.ncols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "aggregate",
                lhs: vec![src.len(), dst.len()],
                rhs: shape(vw),
            });
        }
        let n = vh.nrows();
        if src.iter().chain(dst.iter()).any(|&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "aggregate",
                lhs: shape(vh),
                rhs: vec![src.len()],
            });
        }
        let mut out = Tensor::zeros(vh.raw_dim());
        for e in 0..src.len() {
            let we = vw[[e, 0]];
            let hs = vh.row(src[e]);
            let mut o = out.row_mut(dst[e]);
            o.scaled_add(we, &hs);
        }
        let rg = self.rg(h) || self.rg(w);
        Ok(self.push(out, Op::Aggregate { h, w, src, dst }, rg))
    }

    /// Batch normalisation over rows. Train mode normalises with batch
    /// statistics and updates only `context`'s running statistics; eval
    /// mode reads them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        state: &mut BatchNormState,
        context: BnContext,
        mode: Mode,
    ) -> Result<Var> {
        let vx = self.value(x);
        let width = vx.ncols();
        for p in [scale, shift] {
            let vp = self.value(p);
            if vp.nrows() != 1 || vp.ncols() != width {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    lhs: shape(vx),
                    rhs: shape(vp),
                });
            }
        }
        if state.width() != width {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: shape(vx),
                rhs: vec![state.width()],
            });
        }
        let eps = state.epsilon;
        let (mean, var) = match mode {
            Mode::Train => {
                if vx.nrows() == 0 {
                    return Err(Error::ShapeMismatch {
                        op: "batch_norm",
                        lhs: shape(vx),
                        rhs: vec![1, width],
                    });
                }
                let mean = vx.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
                let centered = vx - &mean;
                let var = (&centered * &centered)
                    .mean_axis(Axis(0))
                    .expect("non-empty")
                    .insert_axis(Axis(0));
                let m = state.momentum;
                let stats = state.stats_mut(context);
                Zip::from(&mut stats.mean).and(&mean).for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
                Zip::from(&mut stats.var)
                    .and(&var)
                    .for_each(|r, &b| *r = ((1.0 - m) * *r + m * b).max(eps));
                (mean, var)
            }
            Mode::Eval => {
                let stats = state.stats(context);
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (vx - &mean) * &inv_std;
        let out = &xhat * self.value(scale) + self.value(shift);
        let rg = self.rg(x) || self.rg(scale) || self.rg(shift);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients from a previous sweep
    /// are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if s.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(s));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            }
        };
        let want = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if want(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if want(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                if want(*r) {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                if want(*b) {
                    acc(*b, -g);
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    acc(*a, g * val(*b));
                }
                if want(*b) {
                    acc(*b, g * val(*a));
                }
            }
            Op::MulCol(a, c) => {
                if want(*a) {
                    acc(*a, g * val(*c));
                }
                if want(*c) {
                    acc(*c, (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ConcatCols(a, b) => {
                let na = val(*a).ncols();
                acc(*a, g.slice(ndarray::s![.., ..na]).to_owned());
                acc(*b, g.slice(ndarray::s![.., na..]).to_owned());
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::Logit(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    *d = if (PROB_EPS..=1.0 - PROB_EPS).contains(&x) {
                        *d / (x * (1.0 - x))
                    } else {
                        0.0
                    }
                });
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                acc(*a, d);
            }
            Op::Log(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    *d = if x >= f64::MIN_POSITIVE { *d / x } else { 0.0 }
                });
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0
                    }
                });
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Tensor::from_elem(val(*a).raw_dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                acc(*a, Tensor::from_elem(val(*a).raw_dim(), g[[0, 0]] / n));
            }
            Op::SumCols(a) => {
                let d = Tensor::zeros(val(*a).raw_dim()) + g;
                acc(*a, d);
            }
            Op::RowNormalize(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut d = Tensor::zeros(x.raw_dim());
                for r in 0..x.nrows() {
                    let xr = x.row(r);
                    let n = xr.dot(&xr).sqrt();
                    let gr = g.row(r);
                    let mut dr = d.row_mut(r);
                    if n < NORM_FLOOR {
                        dr.assign(&(&gr / NORM_FLOOR));
                    } else {
                        let yr = y.row(r);
                        let proj = yr.dot(&gr);
                        dr.assign(&((&gr - &(&yr * proj)) / n));
                    }
                }
                acc(*a, d);
            }
            Op::SegmentSum(a, seg) => {
                let d = g.select(Axis(0), seg);
                acc(*a, d);
            }
            Op::SegmentMean(a, seg, counts) => {
                let mut d = g.select(Axis(0), seg);
                for (mut row, &s) in d.rows_mut().into_iter().zip(seg.iter()) {
                    row /= counts[s] as f64;
                }
                acc(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Tensor::zeros(val(*a).raw_dim());
                for (j, &r) in idx.iter().enumerate() {
                    let mut dr = d.row_mut(r);
                    dr += &g.row(j);
                }
                acc(*a, d);
            }
            Op::Dropout(a, mask) => acc(*a, g * mask),
            Op::Aggregate { h, w, src, dst } => {
                let vh = val(*h);
                let vw = val(*w);
                if want(*h) {
                    let mut dh = Tensor::zeros(vh.raw_dim());
                    for e in 0..src.len() {
                        let gd = g.row(dst[e]);
                        let mut r = dh.row_mut(src[e]);
                        r.scaled_add(vw[[e, 0]], &gd);
                    }
                    acc(*h, dh);
                }
                if want(*w) {
                    let mut dw = Tensor::zeros(vw.raw_dim());
                    for e in 0..src.len() {
                        dw[[e, 0]] = g.row(dst[e]).dot(&vh.row(src[e]));
                    }
                    acc(*w, dw);
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                train,
            } => {
                if want(*shift) {
                    acc(*shift, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if want(*scale) {
                    acc(*scale, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if want(*x) {
                    let dxhat = g * val(*scale);
                    if *train {
                        let n = xhat.nrows() as f64;
                        let sum_d = dxhat.sum_axis(Axis(0)).insert_axis(Axis(0));
                        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        let dx = (&dxhat * n - &sum_d - &(xhat * &sum_dx)) * inv_std / n;
                        acc(*x, dx);
                    } else {
                        acc(*x, dxhat * inv_std);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut t = Tape::new();
        let x = t.constant(array![[0.0]]);
        let y = t.sigmoid(x);
        assert_eq!(t.value(y)[[0, 0]], 0.5);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.7]]);
        let s = t.sigmoid(x);
        let l = t.logit(s);
        assert_abs_diff_eq!(t.value(l)[[0, 0]], 1.7, epsilon = 1e-12);
    }

    #[test]
    fn logit_clamps_saturated_inputs() {
        let mut t = Tape::new();
        let x = t.constant(array![[0.0, 1.0, -3.0]]);
        let l = t.logit(x);
        let v = t.value(l);
        assert!(v.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(v[[0, 0]], logit(PROB_EPS), epsilon = 1e-12);
        assert_abs_diff_eq!(v[[0, 1]], -logit(PROB_EPS), epsilon = 1e-6);
    }

    #[test]
    fn row_normalize_three_four_five() {
        let mut t = Tape::new();
        let x = t.constant(array![[3.0, 4.0]]);
        let y = t.row_normalize(x);
        assert_abs_diff_eq!(t.value(y)[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(t.value(y)[[0, 1]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(array![[3.0]]);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let mut t = Tape::new();
        let x = t.param(array![[2.0]]);
        let y = t.param(array![[5.0, 1.0]]);
        let l = t.exp(x);
        t.backward(l).unwrap();
        assert!(t.grad(y).is_none());
        assert_eq!(t.grad_or_zeros(y), Tensor::zeros((1, 2)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros((2, 3)));
        let b = t.param(Tensor::zeros((2, 3)));
        match t.matmul(a, b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {:?}", other.map(|v| v.index())),
        }
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = t.param(array![[1.0, -2.0], [3.0, 4.0]]);
        let y = t.dropout(x, 0.3, Mode::Eval, &mut rng);
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_is_inverted() {
        let mut t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = t.param(Tensor::ones((200, 50)));
        let y = t.dropout(x, 0.3, Mode::Train, &mut rng);
        let v = t.value(y);
        assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.7).abs() < 1e-12));
        assert!((v.mean().unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn batch_norm_train_standardizes_columns() {
        let mut t = Tape::new();
        let mut st = BatchNormState::new(3);
        st.epsilon = 0.0;
        let x = t.constant(array![[1.0, 10.0, -4.0], [2.0, 30.0, 0.5], [6.0, 11.0, 2.0], [0.0, 3.0, 7.0]]);
        let sc = t.param(st.scale.clone());
        let sh = t.param(st.shift.clone());
        let y = t.batch_norm(x, sc, sh, &mut st, BnContext::Raw, Mode::Train).unwrap();
        let v = t.value(y);
        for c in 0..3 {
            let col = v.column(c);
            let m = col.mean().unwrap();
            let var = col.mapv(|e| (e - m).powi(2)).mean().unwrap();
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn batch_norm_train_default_epsilon_matches_definition() {
        let mut t = Tape::new();
        let mut st = BatchNormState::new(1);
        let x = t.constant(array![[1.0], [2.0], [4.0]]);
        let sc = t.param(st.scale.clone());
        let sh = t.param(st.shift.clone());
        let y = t.batch_norm(x, sc, sh, &mut st, BnContext::Raw, Mode::Train).unwrap();
        let col = t.value(y).column(0).to_owned();
        let var_in = array![1.0, 2.0, 4.0].mapv(|e: f64| (e - 7.0 / 3.0).powi(2)).mean().unwrap();
        let var_out = col.mapv(|e| e * e).mean().unwrap();
        assert_abs_diff_eq!(var_out, var_in / (var_in + 1e-5), epsilon = 1e-12);
    }

    #[test]
    fn batch_norm_single_row_train_is_finite() {
        let mut t = Tape::new();
        let mut st = BatchNormState::new(2);
        let x = t.constant(array![[5.0, -1.0]]);
        let sc = t.param(st.scale.clone());
        let sh = t.param(st.shift.clone());
        let y = t.batch_norm(x, sc, sh, &mut st, BnContext::Raw, Mode::Train).unwrap();
        assert!(t.value(y).iter().all(|v| *v == 0.0));
        assert!(st.raw.var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn batch_norm_switch_isolation() {
        let mut st = BatchNormState::new(2);
        let before = st.augmented.clone();
        for k in 0..2 {
            let mut t = Tape::new();
            let x = t.constant(array![[1.0, 2.0], [3.0, 5.0 + k as f64]]);
            let sc = t.param(st.scale.clone());
            let sh = t.param(st.shift.clone());
            t.batch_norm(x, sc, sh, &mut st, BnContext::Raw, Mode::Train).unwrap();
        }
        assert_eq!(st.augmented, before);
        assert_ne!(st.raw.mean, before.mean);
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut st = BatchNormState::new(2);
        st.augmented.mean = array![[1.0, -2.0]];
        st.augmented.var = array![[4.0, 0.25]];
        let mut t = Tape::new();
        let x = t.constant(array![[3.0, 0.0], [-1.0, -2.0]]);
        let sc = t.param(st.scale.clone());
        let sh = t.param(st.shift.clone());
        let snapshot = st.clone();
        let y = t.batch_norm(x, sc, sh, &mut st, BnContext::Augmented, Mode::Eval).unwrap();
        assert_eq!(st, snapshot);
        let v = t.value(y);
        let eps = 1e-5;
        assert_abs_diff_eq!(v[[0, 0]], 2.0 / (4.0f64 + eps).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[[0, 1]], 2.0 / (0.25f64 + eps).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[[1, 0]], -2.0 / (4.0f64 + eps).sqrt(), epsilon = 1e-15);
        assert_eq!(v[[1, 1]], 0.0);
    }

    #[test]
    fn aggregate_zero_weight_equals_deletion() {
        let h = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]];
        let mut t = Tape::new();
        let hv = t.constant(h.clone());
        let w = t.constant(array![[0.7], [0.0], [1.0]]);
        let a = t.aggregate(hv, w, vec![0, 1, 2].into(), vec![1, 2, 0].into()).unwrap();
        let w2 = t.constant(array![[0.7], [1.0]]);
        let b = t.aggregate(hv, w2, vec![0, 2].into(), vec![1, 0].into()).unwrap();
        assert_eq!(t.value(a), t.value(b));
    }

    #[test]
    fn identical_tapes_are_bit_identical() {
        let build = || {
            let mut t = Tape::new();
            let x = t.param(array![[0.3, -1.2], [2.0, 0.1]]);
            let w = t.param(array![[0.5, 0.25], [-0.75, 1.5]]);
            let y = t.matmul(x, w).unwrap();
            let s = t.sigmoid(y);
            let n = t.row_normalize(s);
            let l = t.sum(n);
            t.backward(l).unwrap();
            (t.value(l).clone(), t.grad_or_zeros(x), t.grad_or_zeros(w))
        };
        assert_eq!(build(), build());
    }
}
