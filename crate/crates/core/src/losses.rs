//! Training objective: dual-branch contrastive term, negative-view
//! repulsion, information bottleneck regulariser and watchman regression.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{watchman_forward, ModelVars};

pub const DEFAULT_BETA: f64 = 0.07;

/// Which loss terms participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossTerms {
    pub simclr: bool,
    pub negative: bool,
    pub info: bool,
    pub watchman: bool,
}

impl LossTerms {
    pub const ALL: Self = Self {
        simclr: true,
        negative: true,
        info: true,
        watchman: true,
    };
    pub const NONE: Self = Self {
        simclr: false,
        negative: false,
        info: false,
        watchman: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub r: f64,
    pub lambda_wm: f64,
    pub terms: LossTerms,
    /// Regularise both positive views instead of the first one only.
    pub symmetric_info: bool,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidConfig(format!("r must lie in (0, 1), got {}", self.r)));
        }
        Ok(())
    }
}

fn eye(n: usize) -> Tensor {
    Tensor::eye(n)
}

/// Sum over rows of `-log l_i(A, B)` for row-normalised `A`, `B`, where
/// `l_i` contrasts `A_i·B_i` against `A_i·B_k` (all k) and `A_i·A_k` (k ≠ i).
fn contrastive_terms(tape: &mut Tape, a: Var, b: Var, beta: f64) -> Result<Var> {
    let n = tape.value(a).nrows();
    let bt = tape.transpose(b);
    let at = tape.transpose(a);
    let sab = tape.matmul(a, bt)?;
    let sab = tape.scale(sab, 1.0 / beta);
    let saa = tape.matmul(a, at)?;
    let saa = tape.scale(saa, 1.0 / beta);

    let id = tape.constant(eye(n));
    let off = tape.constant(Tensor::ones((n, n)) - eye(n));

    let diag = tape.mul(sab, id)?;
    let pos = tape.sum_cols(diag);

    let e_ab = tape.exp(sab);
    let e_aa = tape.exp(saa);
    let e_aa = tape.mul(e_aa, off)?;
    let d1 = tape.sum_cols(e_ab);
    let d2 = tape.sum_cols(e_aa);
    let denom = tape.add(d1, d2)?;
    let log_denom = tape.log(denom);
    let per_row = tape.sub(log_denom, pos)?;
    Ok(tape.sum(per_row))
}

/// Dual-branch contrastive loss on L2-normalised rows:
/// `-(1/2N) Σ_i [log l_i(Z1, Z2) + log l_i(Z2, Z1)]`.
pub fn simclr_loss(tape: &mut Tape, z1: Var, z2: Var, beta: f64) -> Result<Var> {
    let (s1, s2) = (tape.shape(z1), tape.shape(z2));
    if s1 != s2 || s1[0] == 0 {
        return Err(Error::ShapeMismatch {
            op: "simclr_loss",
            lhs: s1,
            rhs: s2,
        });
    }
    let n = s1[0] as f64;
    let a = tape.row_normalize(z1);
    let b = tape.row_normalize(z2);
    let t1 = contrastive_terms(tape, a, b, beta)?;
    let t2 = contrastive_terms(tape, b, a, beta)?;
    let both = tape.add(t1, t2)?;
    Ok(tape.scale(both, 1.0 / (2.0 * n)))
}

/// `Σ_i simclr([z⁺_i; z⁻_i], [z⁺_i; z⁻_i])`. With unit rows `a`, `b` each
/// pair reduces to `½[log(e^{a·a/β} + 2e^{a·b/β}) - a·a/β + log(e^{b·b/β} +
/// 2e^{a·b/β}) - b·b/β]`, evaluated here for all pairs at once.
pub fn negative_loss(tape: &mut Tape, z_plus: Var, z_minus: Var, beta: f64) -> Result<Var> {
    let (s1, s2) = (tape.shape(z_plus), tape.shape(z_minus));
    if s1 != s2 {
        return Err(Error::ShapeMismatch {
            op: "negative_loss",
            lhs: s1,
            rhs: s2,
        });
    }
    let a = tape.row_normalize(z_plus);
    let b = tape.row_normalize(z_minus);
    let dot = |tape: &mut Tape, x: Var, y: Var| -> Result<Var> {
        let m = tape.mul(x, y)?;
        let s = tape.sum_cols(m);
        Ok(tape.scale(s, 1.0 / beta))
    };
    let saa = dot(tape, a, a)?;
    let sbb = dot(tape, b, b)?;
    let sab = dot(tape, a, b)?;
    let e_ab = tape.exp(sab);
    let two_e_ab = tape.scale(e_ab, 2.0);
    let half = |tape: &mut Tape, s_self: Var| -> Result<Var> {
        let e = tape.exp(s_self);
        let d = tape.add(e, two_e_ab)?;
        let l = tape.log(d);
        tape.sub(l, s_self)
    };
    let h1 = half(tape, saa)?;
    let h2 = half(tape, sbb)?;
    let per_pair = tape.add(h1, h2)?;
    let total = tape.sum(per_pair);
    Ok(tape.scale(total, 0.5))
}

/// Mean Bernoulli KL of clamped weights against the prior `r`.
pub fn info_loss(tape: &mut Tape, weights: Var, r: f64) -> Result<Var> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidConfig(format!("r must lie in (0, 1), got {r}")));
    }
    let w = tape.clamp_prob(weights);
    let log_w = tape.log(w);
    let log_w = tape.add_scalar(log_w, -r.ln());
    let keep = tape.mul(w, log_w)?;
    let nw = tape.one_minus(w);
    let log_nw = tape.log(nw);
    let log_nw = tape.add_scalar(log_nw, -(1.0 - r).ln());
    let drop = tape.mul(nw, log_nw)?;
    let kl = tape.add(keep, drop)?;
    Ok(tape.mean(kl))
}

/// Mean over rows of the squared distance between `ψ(z)` and the target
/// spectra.
pub fn watchman_loss(tape: &mut Tape, vars: &ModelVars, z: Var, targets: &Tensor) -> Result<Var> {
    let pred = watchman_forward(tape, vars, z)?;
    let ps = tape.shape(pred);
    if ps != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "watchman_loss",
            lhs: ps,
            rhs: targets.shape().to_vec(),
        });
    }
    let t = tape.constant(targets.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / ps[0].max(1) as f64))
}

/// Inputs to [`total_loss`], all computed on the same batch.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub z_plus1: Var,
    pub z_plus2: Var,
    pub z_minus: Var,
    pub w_plus1: Var,
    pub w_plus2: Var,
    /// Watchman targets, one row per graph; `None` for node tasks.
    pub eigen_targets: Option<&'a Tensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub total: Var,
    pub simclr: f64,
    pub negative: f64,
    pub info: f64,
    pub watchman: f64,
}

/// `L_simclr(Z⁺₁, Z⁺₂) + L₋(Z⁺₁, Z⁻) + L_info(W⁺₁, r) + λ·L_Wm(Z⁺₁)`.
/// Disabled terms are not built at all.
pub fn total_loss(tape: &mut Tape, cfg: &LossConfig, vars: &ModelVars, inputs: LossInputs<'_>) -> Result<LossValue> {
    cfg.validate()?;
    let mut parts: Vec<Var> = Vec::new();
    let mut out = LossValue {
        total: inputs.z_plus1,
        simclr: 0.0,
        negative: 0.0,
        info: 0.0,
        watchman: 0.0,
    };
    let scalar = |tape: &Tape, v: Var| tape.value(v)[[0, 0]];

    if cfg.terms.simclr {
        let l = simclr_loss(tape, inputs.z_plus1, inputs.z_plus2, cfg.beta)?;
        out.simclr = scalar(tape, l);
        parts.push(l);
    }
    if cfg.terms.negative {
        let l = negative_loss(tape, inputs.z_plus1, inputs.z_minus, cfg.beta)?;
        out.negative = scalar(tape, l);
        parts.push(l);
    }
    if cfg.terms.info {
        let l = if cfg.symmetric_info {
            let a = info_loss(tape, inputs.w_plus1, cfg.r)?;
            let b = info_loss(tape, inputs.w_plus2, cfg.r)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)
        } else {
            info_loss(tape, inputs.w_plus1, cfg.r)?
        };
        out.info = scalar(tape, l);
        parts.push(l);
    }
    if cfg.terms.watchman && cfg.lambda_wm != 0.0 {
        if let Some(targets) = inputs.eigen_targets {
            let l = watchman_loss(tape, vars, inputs.z_plus1, targets)?;
            out.watchman = scalar(tape, l);
            parts.push(tape.scale(l, cfg.lambda_wm));
        }
    }
    out.total = match parts.split_first() {
        None => tape.constant(Tensor::zeros((1, 1))),
        Some((&first, rest)) => {
            let mut acc = first;
            for &p in rest {
                acc = tape.add(acc, p)?;
            }
            acc
        }
    };
    Ok(out)
}
