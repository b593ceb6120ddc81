//! Optimisation loop: Adam, the prior schedule, per-epoch validation,
//! checkpoints and best-epoch selection.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Tensor};
use crate::datasets::{Dataset, Task};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy_from_embeddings, infer_graphs, EvalSplit};
use crate::graph::{batch_graphs, normalized_laplacian, top_k_eigenvalues, GraphBatch};
use crate::losses::{total_loss, LossConfig, LossInputs, LossTerms, DEFAULT_BETA};
use crate::model::{make_triplet, ModelConfig, ModelState, ModelVars};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn default_lambda() -> Option<f64> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Expected task; checked against the dataset when set.
    pub task: Option<Task>,
    pub loss: LossTerms,
    pub r_initial: f64,
    pub r_final: f64,
    pub tau: f64,
    pub watchman: bool,
    /// Watchman weight; 0.3 for graph tasks and 0 for node tasks when unset.
    #[serde(default = "default_lambda")]
    pub lambda_wm: Option<f64>,
    pub eigen_k: usize,
    pub beta: f64,
    pub symmetric_info: bool,
    pub detach_selector_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            dropout: 0.3,
            epochs: 150,
            batch_size: 256,
            seed: 0,
            task: None,
            loss: LossTerms::ALL,
            r_initial: 0.9,
            r_final: 0.7,
            tau: 1.0,
            watchman: true,
            lambda_wm: None,
            eigen_k: 8,
            beta: DEFAULT_BETA,
            symmetric_info: false,
            detach_selector_input: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(0.0 < self.r_final && self.r_final <= self.r_initial && self.r_initial < 1.0) {
            return bad(format!(
                "need 0 < r_final <= r_initial < 1, got r_final {} and r_initial {}",
                self.r_final, self.r_initial
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.beta <= 0.0 {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.eigen_k == 0 {
            return bad("eigen_k must be positive".into());
        }
        Ok(())
    }

    pub fn lambda(&self, task: Task) -> f64 {
        if !self.watchman {
            return 0.0;
        }
        self.lambda_wm.unwrap_or(match task {
            Task::Graph => 0.3,
            Task::Node => 0.0,
        })
    }
}

/// `max(r_final, r_initial − 0.1·⌊epoch/10⌋)`.
pub fn r_schedule(epoch: usize, r_initial: f64, r_final: f64) -> f64 {
    (r_initial - 0.1 * (epoch / 10) as f64).max(r_final)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.raw_dim())).collect(),
        }
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter moves, so a non-finite gradient leaves the state untouched.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len(), state.m.len()],
            rhs: vec![grads.len()],
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: params[i].shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        ndarray::Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub r: f64,
    pub loss: f64,
    pub simclr: f64,
    pub negative: f64,
    pub info: f64,
    pub watchman: f64,
    pub val_acc: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Index of the epoch with the highest validation accuracy, earliest first.
pub fn select_best_epoch(val_accs: &[f64]) -> Result<usize> {
    if val_accs.is_empty() {
        return Err(Error::InvalidConfig("cannot select from an empty history".into()));
    }
    let mut best = 0;
    for (i, &a) in val_accs.iter().enumerate() {
        if a > val_accs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: usize,
    pub r: f64,
    pub val_acc: Option<f64>,
    pub model: ModelState,
    pub rng: RngState,
    /// Set on checkpoints written when training halted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ck: Checkpoint = serde_path_to_error::deserialize(de).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Shuffled minibatches; a trailing singleton joins the previous batch.
pub fn make_batches(items: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = items.to_vec();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Top-k normalised Laplacian eigenvalues of every graph, one row each.
pub fn eigen_targets(ds: &Dataset, k: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros((ds.graphs.len(), k));
    for (i, g) in ds.graphs.iter().enumerate() {
        let ev = top_k_eigenvalues(&normalized_laplacian(g), k)?;
        t.row_mut(i).assign(&ndarray::ArrayView1::from(&ev[..]));
    }
    Ok(t)
}

struct StepTerms {
    total: f64,
    simclr: f64,
    negative: f64,
    info: f64,
    watchman: f64,
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,r,loss,simclr,negative,info,watchman,val_acc,checkpoint\n");
    for h in history {
        let ck = h.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            h.epoch, h.r, h.loss, h.simclr, h.negative, h.info, h.watchman, h.val_acc, ck
        );
    }
    s
}

/// Trains a fresh model. With `run_dir` set, writes `config.json`,
/// `epoch_<n>.ckpt` per epoch and `history.csv` there.
pub fn train(cfg: &TrainConfig, ds: &Dataset, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    if let Some(t) = cfg.task {
        if t != ds.task {
            return Err(Error::InvalidConfig(format!(
                "configured task {t:?} does not match dataset task {:?}",
                ds.task
            )));
        }
    }
    let splits = ds.splits()?.clone();
    if splits.train.len() < 2 {
        return Err(Error::InvalidDataset("training split needs at least two items".into()));
    }
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = ModelState::new(
        &ModelConfig {
            task: ds.task,
            input_dim: ds.feature_dim,
            dropout: cfg.dropout,
            tau: cfg.tau,
            eigen_k: cfg.eigen_k,
            detach_selector_input: cfg.detach_selector_input,
        },
        &mut rng,
    );
    let mut adam = AdamState::new(&state.params());
    let lambda = cfg.lambda(ds.task);
    let targets = if ds.task == Task::Graph && lambda != 0.0 && cfg.loss.watchman {
        Some(eigen_targets(ds, cfg.eigen_k)?)
    } else {
        None
    };
    // node tasks run every step on the one full graph
    let full_batch = match ds.task {
        Task::Node => Some(batch_graphs(&ds.graphs)?),
        Task::Graph => None,
    };

    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    for epoch in 0..cfg.epochs {
        let r = r_schedule(epoch, cfg.r_initial, cfg.r_final);
        let loss_cfg = LossConfig {
            beta: cfg.beta,
            r,
            lambda_wm: lambda,
            terms: cfg.loss,
            symmetric_info: cfg.symmetric_info,
        };
        let batches = make_batches(&splits.train, cfg.batch_size, &mut rng);
        let mut sums = [0.0f64; 5];
        let mut weight = 0.0;
        for items in &batches {
            let step = match train_step(&mut state, &mut adam, cfg, &loss_cfg, ds, full_batch.as_ref(), items, targets.as_ref(), &mut rng) {
                Ok(s) => s,
                Err(e @ Error::NonFinite(_)) => {
                    halt(&state, epoch, r, &rng, run_dir, &e, &history)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let n = items.len() as f64;
            for (acc, v) in sums.iter_mut().zip([step.total, step.simclr, step.negative, step.info, step.watchman]) {
                *acc += n * v;
            }
            weight += n;
        }
        for s in &mut sums {
            *s /= weight;
        }

        let (emb, _) = infer_graphs(&state, &ds.graphs)?;
        let val_acc = accuracy_from_embeddings(&emb, ds, EvalSplit::Val)?;
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch,
            r,
            val_acc: Some(val_acc),
            model: state.clone(),
            rng: RngState::capture(&rng),
            diagnostic: None,
        };
        let path = match run_dir {
            Some(dir) => {
                let p = dir.join(format!("epoch_{epoch}.ckpt"));
                ck.save(&p)?;
                Some(p)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (simclr {:.4}, negative {:.4}, info {:.4}, watchman {:.4}) val_acc {val_acc:.4}",
            sums[0], sums[1], sums[2], sums[3], sums[4]
        );
        history.push(EpochRecord {
            epoch,
            r,
            loss: sums[0],
            simclr: sums[1],
            negative: sums[2],
            info: sums[3],
            watchman: sums[4],
            val_acc,
            checkpoint: path,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.val_acc.unwrap_or(f64::NEG_INFINITY)) {
            best = Some(ck);
        }
        if let Some(dir) = run_dir {
            fs::write(dir.join("history.csv"), history_csv(&history))?;
        }
    }
    let accs: Vec<f64> = history.iter().map(|h| h.val_acc).collect();
    let best_epoch = select_best_epoch(&accs)?;
    let best = best.expect("at least one epoch");
    debug_assert_eq!(best.epoch, best_epoch);
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

fn halt(
    state: &ModelState,
    epoch: usize,
    r: f64,
    rng: &ChaCha8Rng,
    run_dir: Option<&Path>,
    err: &Error,
    history: &[EpochRecord],
) -> Result<()> {
    log::error!("training halted at epoch {epoch}: {err}");
    if let Some(dir) = run_dir {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch,
            r,
            val_acc: None,
            model: state.clone(),
            rng: RngState::capture(rng),
            diagnostic: Some(err.to_string()),
        };
        ck.save(dir.join(format!("diagnostic_epoch_{epoch}.ckpt")))?;
        fs::write(dir.join("history.csv"), history_csv(history))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    state: &mut ModelState,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    ds: &Dataset,
    full_batch: Option<&GraphBatch>,
    items: &[usize],
    targets: Option<&Tensor>,
    rng: &mut ChaCha8Rng,
) -> Result<StepTerms> {
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&mut tape, state);
    let owned;
    let batch = match full_batch {
        Some(b) => b,
        None => {
            let graphs: Vec<_> = items.iter().map(|&i| &ds.graphs[i]).collect();
            owned = batch_graphs(&graphs)?;
            &owned
        }
    };
    let tri = make_triplet(&mut tape, &vars, state, batch, Mode::Train, rng)?;
    let (z1, z2, zm) = match ds.task {
        Task::Graph => (tri.z_plus1, tri.z_plus2, tri.z_minus),
        Task::Node => {
            let idx: Rc<[usize]> = items.into();
            (
                tape.gather_rows(tri.z_plus1, idx.clone())?,
                tape.gather_rows(tri.z_plus2, idx.clone())?,
                tape.gather_rows(tri.z_minus, idx)?,
            )
        }
    };
    let batch_targets = targets.map(|t| t.select(ndarray::Axis(0), items));
    let value = total_loss(
        &mut tape,
        loss_cfg,
        &vars,
        LossInputs {
            z_plus1: z1,
            z_plus2: z2,
            z_minus: zm,
            w_plus1: tri.w_plus1,
            w_plus2: tri.w_plus2,
            eigen_targets: batch_targets.as_ref(),
        },
    )?;
    let total = tape.value(value.total)[[0, 0]];
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("training loss {total}")));
    }
    tape.backward(value.total)?;
    let grads: Vec<Tensor> = vars.all().into_iter().map(|v| tape.grad_or_zeros(v)).collect();
    let mut params = state.params_mut();
    adam_step(&mut params, &grads, adam, cfg.learning_rate)?;
    Ok(StepTerms {
        total,
        simclr: value.simclr,
        negative: value.negative,
        info: value.info,
        watchman: value.watchman,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate_ba2motifs;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = Tensor::from_elem((2, 2), 0.5);
        let g = Tensor::ones((2, 2));
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[g], &mut st, 1e-3).unwrap();
        for &x in p.iter() {
            assert!((x - 0.5 + 1e-3).abs() <= 1e-8 * 1e-3);
        }
    }

    #[test]
    fn adam_zero_grad_and_identical_grads() {
        let mut a = Tensor::from_elem((1, 3), 2.0);
        let mut b = Tensor::from_elem((1, 3), 2.0);
        let before = a.clone();
        let mut st = AdamState::new(&[&a, &b]);
        let g = Tensor::from_shape_vec((1, 3), vec![0.3, -1.0, 4.0]).unwrap();
        adam_step(&mut [&mut a, &mut b], &[Tensor::zeros((1, 3)), g.clone()], &mut st, 1e-2).unwrap();
        assert_eq!(a, before);
        let mut c = before.clone();
        let mut d = before.clone();
        let mut st = AdamState::new(&[&c, &d]);
        adam_step(&mut [&mut c, &mut d], &[g.clone(), g], &mut st, 1e-2).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = Tensor::zeros((1, 1));
        let mut st = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &[Tensor::from_elem((1, 1), f64::NAN)], &mut st, 1e-3);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(st.t, 0);
        assert_eq!(p[[0, 0]], 0.0);
    }

    #[test]
    fn schedule_values() {
        assert_abs_diff_eq!(r_schedule(0, 0.9, 0.7), 0.9);
        assert_abs_diff_eq!(r_schedule(25, 0.9, 0.7), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(r_schedule(300, 0.9, 0.1), 0.1);
        assert_abs_diff_eq!(r_schedule(15, 0.9, 0.1), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn best_epoch_selection() {
        assert_eq!(select_best_epoch(&[0.5, 0.9, 0.7]).unwrap(), 1);
        assert_eq!(select_best_epoch(&[0.9, 0.9]).unwrap(), 0);
        assert_eq!(select_best_epoch(&[0.3]).unwrap(), 0);
        assert!(select_best_epoch(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { r_final: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { r_final: 0.95, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { epochs: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let json = r#"{"epochs": 3, "bogus": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lambda(Task::Graph), 0.3);
        assert_eq!(cfg.lambda(Task::Node), 0.0);
    }

    #[test]
    fn batches_merge_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(&(0..9).collect::<Vec<_>>(), 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = make_batches(&(0..10).collect::<Vec<_>>(), 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn rng_state_round_trip() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.random();
        let st = RngState::capture(&rng);
        let json = serde_json::to_string(&st).unwrap();
        let mut back = serde_json::from_str::<RngState>(&json).unwrap().restore();
        assert_eq!(rng.random::<u64>(), back.random::<u64>());
    }

    fn small() -> (TrainConfig, Dataset) {
        let ds = generate_ba2motifs(20, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 7,
            ..Default::default()
        };
        (cfg, ds)
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, ds) = small();
        let a = train(&cfg, &ds, None).unwrap();
        let b = train(&cfg, &ds, None).unwrap();
        assert_eq!(a.best.to_json().unwrap(), b.best.to_json().unwrap());
    }

    #[test]
    fn no_terms_leave_parameters_unchanged() {
        let (mut cfg, ds) = small();
        cfg.loss = LossTerms::NONE;
        let out = train(&cfg, &ds, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = ModelState::new(
            &ModelConfig {
                task: ds.task,
                input_dim: ds.feature_dim,
                dropout: cfg.dropout,
                tau: cfg.tau,
                eigen_k: cfg.eigen_k,
                detach_selector_input: false,
            },
            &mut rng,
        );
        for (a, b) in out.best.model.params().into_iter().zip(init.params()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn run_directory_layout_and_checkpoint_round_trip() {
        let (cfg, ds) = small();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &ds, Some(dir.path())).unwrap();
        assert!(dir.path().join("config.json").exists());
        let hist = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(hist.lines().count(), 1 + cfg.epochs);
        for e in 0..cfg.epochs {
            assert!(dir.path().join(format!("epoch_{e}.ckpt")).exists());
        }
        let back = Checkpoint::load(dir.path().join(format!("epoch_{}.ckpt", out.best_epoch))).unwrap();
        assert_eq!(back, out.best);
        let mut bad = out.best.clone();
        bad.version = 99;
        assert!(Checkpoint::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn task_mismatch_rejected() {
        let (mut cfg, ds) = small();
        cfg.task = Some(Task::Node);
        assert!(train(&cfg, &ds, None).is_err());
    }
}
