//! Shared finite-difference harness and independent reference
//! implementations.

#![allow(dead_code)]

use std::rc::Rc;

use ingenious_core::autodiff::{BatchNormState, BnContext, Mode, Tape, Tensor, Var};
use ingenious_core::datasets::Task;
use ingenious_core::losses::{info_loss, negative_loss, simclr_loss, watchman_loss};
use ingenious_core::model::{LinearVars, ModelConfig, ModelState, ModelVars, EMBED_DIM};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 20;
pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor: a gradient that is identically zero (e.g. a
/// single-row contrastive loss) compares as absolute error.
pub const NORM_FLOOR: f64 = 1e-6;
/// Larger inputs are checked on a seeded sample of coordinates.
pub const MAX_COORDS: usize = 400;

pub type Forward = dyn Fn(&mut Tape, &[Var]) -> Var;

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Tensor {
    Tensor::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

/// Values bounded away from zero (for ops with a kink there).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Tensor {
    Tensor::from_shape_simple_fn(shape, || {
        let m = rng.random_range(0.1..1.5);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Relative error between the analytic gradient and central differences,
/// `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, NORM_FLOOR)` over the checked entries.
/// Non-scalar outputs are contracted with a fixed random tensor first.
pub fn gradient_error(inputs: &[Tensor], f: &Forward, seed: u64) -> f64 {
    let project = |tape: &mut Tape, out: Var| -> Var {
        let shape = tape.shape(out);
        if shape == [1, 1] {
            return out;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let c = tape.constant(uniform(&mut rng, (shape[0], shape[1]), -1.0, 1.0));
        let m = tape.mul(out, c).expect("same shape");
        tape.sum(m)
    };
    let eval = |xs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let out = f(&mut t, &vs);
        let s = project(&mut t, out);
        t.value(s)[[0, 0]]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let s = project(&mut tape, out);
    tape.backward(s).expect("scalar");
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(k, x)| (0..x.len()).map(move |i| (k, i))).collect();
    if coords.len() > MAX_COORDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(MAX_COORDS);
    }
    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    let mut xs = inputs.to_vec();
    for &(k, idx) in &coords {
        let (r, c) = (idx / xs[k].ncols(), idx % xs[k].ncols());
        let orig = xs[k][[r, c]];
        xs[k][[r, c]] = orig + FD_STEP;
        let up = eval(&xs);
        xs[k][[r, c]] = orig - FD_STEP;
        let down = eval(&xs);
        xs[k][[r, c]] = orig;
        let num = (up - down) / (2.0 * FD_STEP);
        let ana = analytic[k][[r, c]];
        diff2 += (num - ana) * (num - ana);
        a2 += ana * ana;
        n2 += num * num;
    }
    diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(NORM_FLOOR)
}

pub struct GradCase {
    pub name: &'static str,
    /// Builds the inputs and forward function of one seeded instance.
    pub build: fn(u64) -> (Vec<Tensor>, Box<Forward>),
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

macro_rules! case {
    ($name:expr, |$rng:ident, $seed:ident| $body:block) => {
        GradCase {
            name: $name,
            build: |$seed: u64| {
                #[allow(unused_mut)]
                let mut $rng = ChaCha8Rng::seed_from_u64($seed);
                $body
            },
        }
    };
}

/// Every differentiable primitive and every loss.
pub fn gradient_cases() -> Vec<GradCase> {
    vec![
        case!("matmul", |rng, _s| {
            let (n, k) = dims(&mut rng);
            let m = rng.random_range(1..5);
            (
                vec![uniform(&mut rng, (n, k), -1.0, 1.0), uniform(&mut rng, (k, m), -1.0, 1.0)],
                Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
            )
        }),
        case!("transpose", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, -1.0, 1.0)], Box::new(|t, v| t.transpose(v[0])))
        }),
        case!("add", |rng, _s| {
            let s = dims(&mut rng);
            (
                vec![uniform(&mut rng, s, -1.0, 1.0), uniform(&mut rng, s, -1.0, 1.0)],
                Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            )
        }),
        case!("add_row", |rng, _s| {
            let (n, m) = dims(&mut rng);
            (
                vec![uniform(&mut rng, (n, m), -1.0, 1.0), uniform(&mut rng, (1, m), -1.0, 1.0)],
                Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
            )
        }),
        case!("sub", |rng, _s| {
            let s = dims(&mut rng);
            (
                vec![uniform(&mut rng, s, -1.0, 1.0), uniform(&mut rng, s, -1.0, 1.0)],
                Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
            )
        }),
        case!("mul", |rng, _s| {
            let s = dims(&mut rng);
            (
                vec![uniform(&mut rng, s, -1.0, 1.0), uniform(&mut rng, s, -1.0, 1.0)],
                Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            )
        }),
        case!("mul_col", |rng, _s| {
            let (n, m) = dims(&mut rng);
            (
                vec![uniform(&mut rng, (n, m), -1.0, 1.0), uniform(&mut rng, (n, 1), -1.0, 1.0)],
                Box::new(|t, v| t.mul_col(v[0], v[1]).unwrap()),
            )
        }),
        case!("scale", |rng, _s| {
            let s = dims(&mut rng);
            let c = rng.random_range(-2.0..2.0);
            (vec![uniform(&mut rng, s, -1.0, 1.0)], Box::new(move |t, v| t.scale(v[0], c)))
        }),
        case!("add_scalar", |rng, _s| {
            let s = dims(&mut rng);
            let c = rng.random_range(-2.0..2.0);
            (vec![uniform(&mut rng, s, -1.0, 1.0)], Box::new(move |t, v| t.add_scalar(v[0], c)))
        }),
        case!("one_minus", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, -1.0, 1.0)], Box::new(|t, v| t.one_minus(v[0])))
        }),
        case!("concat_cols", |rng, _s| {
            let (n, m) = dims(&mut rng);
            let k = rng.random_range(1..4);
            (
                vec![uniform(&mut rng, (n, m), -1.0, 1.0), uniform(&mut rng, (n, k), -1.0, 1.0)],
                Box::new(|t, v| t.concat_cols(v[0], v[1]).unwrap()),
            )
        }),
        case!("sigmoid", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, -4.0, 4.0)], Box::new(|t, v| t.sigmoid(v[0])))
        }),
        case!("logit", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, 0.05, 0.95)], Box::new(|t, v| t.logit(v[0])))
        }),
        case!("relu", |rng, _s| {
            let s = dims(&mut rng);
            (vec![away_from_zero(&mut rng, s)], Box::new(|t, v| t.relu(v[0])))
        }),
        case!("log", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, 0.1, 3.0)], Box::new(|t, v| t.log(v[0])))
        }),
        case!("exp", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, -2.0, 2.0)], Box::new(|t, v| t.exp(v[0])))
        }),
        case!("clamp", |rng, _s| {
            let s = dims(&mut rng);
            // inside and outside the band, away from its edges
            let x = Tensor::from_shape_simple_fn(s, || {
                let pick: f64 = rng.random();
                if pick < 0.3 {
                    rng.random_range(-2.0..-0.6)
                } else if pick < 0.7 {
                    rng.random_range(-0.4..0.4)
                } else {
                    rng.random_range(0.6..2.0)
                }
            });
            (vec![x], Box::new(|t, v| t.clamp(v[0], -0.5, 0.5)))
        }),
        case!("clamp_prob", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, 0.01, 0.99)], Box::new(|t, v| t.clamp_prob(v[0])))
        }),
        case!("sum", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, -1.0, 1.0)], Box::new(|t, v| t.sum(v[0])))
        }),
        case!("mean", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, -1.0, 1.0)], Box::new(|t, v| t.mean(v[0])))
        }),
        case!("sum_cols", |rng, _s| {
            let s = dims(&mut rng);
            (vec![uniform(&mut rng, s, -1.0, 1.0)], Box::new(|t, v| t.sum_cols(v[0])))
        }),
        case!("row_normalize", |rng, _s| {
            let (n, m) = dims(&mut rng);
            (vec![away_from_zero(&mut rng, (n, m + 1))], Box::new(|t, v| t.row_normalize(v[0])))
        }),
        case!("segment_sum", |rng, _s| {
            let (n, m) = dims(&mut rng);
            let k = rng.random_range(1..4);
            let seg: Rc<[usize]> = (0..n).map(|_| rng.random_range(0..k)).collect();
            (
                vec![uniform(&mut rng, (n, m), -1.0, 1.0)],
                Box::new(move |t, v| t.segment_sum(v[0], seg.clone(), k).unwrap()),
            )
        }),
        case!("segment_mean", |rng, _s| {
            let (n, m) = dims(&mut rng);
            let k = rng.random_range(1..4);
            let seg: Rc<[usize]> = (0..n).map(|_| rng.random_range(0..k)).collect();
            (
                vec![uniform(&mut rng, (n, m), -1.0, 1.0)],
                Box::new(move |t, v| t.segment_mean(v[0], seg.clone(), k).unwrap()),
            )
        }),
        case!("gather_rows", |rng, _s| {
            let (n, m) = dims(&mut rng);
            let idx: Rc<[usize]> = (0..rng.random_range(1..7)).map(|_| rng.random_range(0..n)).collect();
            (
                vec![uniform(&mut rng, (n, m), -1.0, 1.0)],
                Box::new(move |t, v| t.gather_rows(v[0], idx.clone()).unwrap()),
            )
        }),
        case!("dropout", |rng, seed| {
            let s = dims(&mut rng);
            (
                vec![uniform(&mut rng, s, -1.0, 1.0)],
                Box::new(move |t, v| {
                    // same mask on every evaluation
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    t.dropout(v[0], 0.3, Mode::Train, &mut r)
                }),
            )
        }),
        case!("aggregate", |rng, _s| {
            let (n, m) = dims(&mut rng);
            let e = rng.random_range(1..8);
            let src: Rc<[usize]> = (0..e).map(|_| rng.random_range(0..n)).collect();
            let dst: Rc<[usize]> = (0..e).map(|_| rng.random_range(0..n)).collect();
            (
                vec![uniform(&mut rng, (n, m), -1.0, 1.0), uniform(&mut rng, (e, 1), 0.0, 1.0)],
                Box::new(move |t, v| t.aggregate(v[0], v[1], src.clone(), dst.clone()).unwrap()),
            )
        }),
        case!("batch_norm", |rng, _s| {
            let n = rng.random_range(2..7);
            let m = rng.random_range(1..5);
            (
                vec![
                    uniform(&mut rng, (n, m), -2.0, 2.0),
                    uniform(&mut rng, (1, m), 0.5, 1.5),
                    uniform(&mut rng, (1, m), -0.5, 0.5),
                ],
                Box::new(move |t, v| {
                    let mut st = BatchNormState::new(m);
                    t.batch_norm(v[0], v[1], v[2], &mut st, BnContext::Augmented, Mode::Train)
                        .unwrap()
                }),
            )
        }),
        case!("batch_norm_eval", |rng, _s| {
            let n = rng.random_range(1..5);
            let m = rng.random_range(1..5);
            let mut st = BatchNormState::new(m);
            st.raw.mean = uniform(&mut rng, (1, m), -1.0, 1.0);
            st.raw.var = uniform(&mut rng, (1, m), 0.5, 2.0);
            (
                vec![
                    uniform(&mut rng, (n, m), -2.0, 2.0),
                    uniform(&mut rng, (1, m), 0.5, 1.5),
                    uniform(&mut rng, (1, m), -0.5, 0.5),
                ],
                Box::new(move |t, v| {
                    let mut st = st.clone();
                    t.batch_norm(v[0], v[1], v[2], &mut st, BnContext::Raw, Mode::Eval).unwrap()
                }),
            )
        }),
        case!("simclr_loss", |rng, _s| {
            let n = rng.random_range(1..9);
            let d = rng.random_range(2..6);
            (
                vec![uniform(&mut rng, (n, d), -1.0, 1.0), uniform(&mut rng, (n, d), -1.0, 1.0)],
                Box::new(|t, v| simclr_loss(t, v[0], v[1], 0.5).unwrap()),
            )
        }),
        case!("negative_loss", |rng, _s| {
            let n = rng.random_range(1..9);
            let d = rng.random_range(2..6);
            (
                vec![uniform(&mut rng, (n, d), -1.0, 1.0), uniform(&mut rng, (n, d), -1.0, 1.0)],
                Box::new(|t, v| negative_loss(t, v[0], v[1], 0.5).unwrap()),
            )
        }),
        case!("info_loss", |rng, _s| {
            let e = rng.random_range(1..12);
            let r = rng.random_range(0.1..0.9);
            (
                vec![uniform(&mut rng, (e, 1), 0.02, 0.98)],
                Box::new(move |t, v| info_loss(t, v[0], r).unwrap()),
            )
        }),
        case!("watchman_loss", |rng, seed| {
            let n = rng.random_range(1..4);
            let k = 3;
            let targets = uniform(&mut rng, (n, k), 0.0, 2.0);
            let mut inputs = vec![uniform(&mut rng, (n, EMBED_DIM), -1.0, 1.0)];
            let mut init = ChaCha8Rng::seed_from_u64(seed);
            let state = ModelState::new(
                &ModelConfig {
                    task: Task::Graph,
                    input_dim: 2,
                    dropout: 0.0,
                    tau: 1.0,
                    eigen_k: k,
                    detach_selector_input: false,
                },
                &mut init,
            );
            for l in &state.watchman {
                inputs.push(l.weight.clone());
                inputs.push(l.bias.clone());
            }
            (
                inputs,
                Box::new(move |t, v| {
                    let mut vars = ModelVars::bind(t, &state);
                    vars.watchman = (0..3)
                        .map(|i| LinearVars {
                            weight: v[1 + 2 * i],
                            bias: v[2 + 2 * i],
                        })
                        .collect();
                    watchman_loss(t, &vars, v[0], &targets).unwrap()
                }),
            )
        }),
    ]
}

/// Worst relative error of a case over the seeded instances.
pub fn worst_error(case: &GradCase) -> f64 {
    (0..INSTANCES)
        .map(|s| {
            let (inputs, f) = (case.build)(1000 + s);
            gradient_error(&inputs, f.as_ref(), s)
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// reference implementations

fn normalise(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Contrastive loss written as explicit loops over rows.
pub fn naive_simclr(z1: &Tensor, z2: &Tensor, beta: f64) -> f64 {
    let n = z1.nrows();
    let a: Vec<Vec<f64>> = z1.rows().into_iter().map(|r| normalise(&r.to_vec())).collect();
    let b: Vec<Vec<f64>> = z2.rows().into_iter().map(|r| normalise(&r.to_vec())).collect();
    let l = |x: &[Vec<f64>], y: &[Vec<f64>], i: usize| {
        let num = (dot(&x[i], &y[i]) / beta).exp();
        let mut den = 0.0;
        for k in 0..n {
            den += (dot(&x[i], &y[k]) / beta).exp();
            if k != i {
                den += (dot(&x[i], &x[k]) / beta).exp();
            }
        }
        num / den
    };
    let mut total = 0.0;
    for i in 0..n {
        total += l(&a, &b, i).ln() + l(&b, &a, i).ln();
    }
    -total / (2.0 * n as f64)
}

/// Determinant by cofactor expansion along the first row.
pub fn determinant(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    let mut det = 0.0;
    for j in 0..n {
        let minor: Vec<Vec<f64>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &v)| v).collect())
            .collect();
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[0][j] * determinant(&minor);
    }
    det
}

/// Roots of `det(A − λI)` located on a fine grid over the Gershgorin
/// interval and refined by bisection. Sorted ascending, with double roots
/// found through sign-free minima.
pub fn characteristic_roots(a: &Tensor) -> Vec<f64> {
    let n = a.nrows();
    let p = |lambda: f64| {
        let m: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a[[i, j]] - if i == j { lambda } else { 0.0 }).collect())
            .collect();
        determinant(&m)
    };
    let radius = (0..n)
        .map(|i| (0..n).map(|j| a[[i, j]].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let steps = 200_000;
    let h = 2.0 * radius / steps as f64;
    let mut roots = Vec::new();
    let mut prev = p(-radius);
    for s in 1..=steps {
        let x = -radius + s as f64 * h;
        let cur = p(x);
        if cur == 0.0 {
            roots.push(x);
        } else if prev != 0.0 && prev.signum() != cur.signum() {
            let (mut lo, mut hi) = (x - h, x);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if p(mid).signum() == p(lo).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = cur;
    }
    roots
}
