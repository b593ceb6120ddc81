//! `ingenious`: generate datasets, train, evaluate and sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ingenious_core::datasets::{generate, load_dataset, save_dataset, Dataset, Task};
use ingenious_core::evaluation::{evaluate, Metric, MetricsReport};
use ingenious_core::losses::LossTerms;
use ingenious_core::report::{aggregate, reports_csv, summary_csv, Layout, Sidecar};
use ingenious_core::training::{train, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(name = "ingenious", version, about = "Interpretable unsupervised graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSON.
    Generate(GenerateArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Evaluate checkpoints and aggregate across them.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of one hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Graph count (BA2Motifs only).
    #[arg(long)]
    n_graphs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LossPreset {
    Full,
    NoInfo,
    NoNegative,
    NoNegativeNoInfo,
}

impl LossPreset {
    fn terms(self) -> LossTerms {
        let mut t = LossTerms::ALL;
        match self {
            Self::Full => {}
            Self::NoInfo => t.info = false,
            Self::NoNegative => t.negative = false,
            Self::NoNegativeNoInfo => {
                t.negative = false;
                t.info = false;
            }
        }
        t
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Experiment description; every field can come from a JSON file and be
/// overridden on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentConfig {
    /// Generator name or path to a dataset JSON file.
    dataset: Option<String>,
    /// Seed used when the dataset is generated.
    dataset_seed: u64,
    name: String,
    output_dir: Option<PathBuf>,
    seeds: Vec<u64>,
    metrics: Vec<Metric>,
    train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            dataset_seed: 0,
            name: "run".into(),
            output_dir: None,
            seeds: vec![0],
            metrics: Metric::ALL.to_vec(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator name (`ba2motifs`, `tree-cycle`, `tree-grid`) or JSON path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    dataset_seed: Option<u64>,
    #[arg(long)]
    name: Option<String>,
    /// Output root; defaults to $INGENIOUS_RUNS_DIR, then `runs`.
    #[arg(long, env = "INGENIOUS_RUNS_DIR")]
    out_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    loss: Option<LossPreset>,
    #[arg(long, value_enum)]
    watchman: Option<Switch>,
    #[arg(long)]
    r_initial: Option<f64>,
    #[arg(long)]
    r_final: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lambda_wm: Option<f64>,
    #[arg(long)]
    detach_selector_input: bool,
    /// Comma-separated metrics: acc, auc, faithfulness, wasserstein, sparsity.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Independent jobs run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! over {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        if self.out_dir.is_some() {
            c.output_dir = self.out_dir.clone();
        }
        over!(self.dataset_seed, c.dataset_seed);
        over!(self.name, c.name);
        over!(self.seeds, c.seeds);
        over!(self.r_initial, c.train.r_initial);
        over!(self.r_final, c.train.r_final);
        over!(self.tau, c.train.tau);
        over!(self.epochs, c.train.epochs);
        over!(self.batch_size, c.train.batch_size);
        over!(self.learning_rate, c.train.learning_rate);
        over!(self.dropout, c.train.dropout);
        if let Some(l) = self.lambda_wm {
            c.train.lambda_wm = Some(l);
        }
        if let Some(p) = self.loss {
            c.train.loss = p.terms();
        }
        if let Some(w) = self.watchman {
            c.train.watchman = w == Switch::On;
        }
        if self.detach_selector_input {
            c.train.detach_selector_input = true;
        }
        if let Some(m) = &self.metrics {
            c.metrics = m.iter().map(|s| Metric::parse(s.trim())).collect::<Result<_, _>>()?;
        }
        if c.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        c.train.validate()?;
        Ok(c)
    }
}

impl ExperimentConfig {
    fn runs_root(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let spec = self.dataset.as_deref().context("no dataset given (use --dataset)")?;
        resolve_dataset(spec, self.dataset_seed)
    }
}

fn resolve_dataset(spec: &str, seed: u64) -> Result<Dataset> {
    let path = Path::new(spec);
    if path.exists() {
        return load_dataset(path).with_context(|| format!("loading {spec}"));
    }
    Ok(generate(spec, seed, None)?)
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint files, one per seed.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    dataset_seed: u64,
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Directory receiving report.csv, summary.csv and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Seed for the random-order faithfulness baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    RFinal,
    Tau,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    exp: ExperimentArgs,
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let ds = generate(&a.dataset, a.seed, a.n_graphs)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_dataset(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} ({} items) to {}", ds.name, ds.num_items(), a.out.display());
    Ok(())
}

/// Runs `jobs` closures on up to `parallel` threads, keeping input order.
fn run_jobs<T: Send, F: Fn(usize) -> Result<T> + Sync>(n: usize, parallel: usize, f: F) -> Result<Vec<T>> {
    let parallel = parallel.max(1);
    let mut out: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    for chunk_start in (0..n).step_by(parallel) {
        let end = (chunk_start + parallel).min(n);
        let results: Vec<Result<T>> = std::thread::scope(|s| {
            let handles: Vec<_> = (chunk_start..end).map(|i| { let f = &f; s.spawn(move || f(i)) }).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("job panicked"))))
                .collect()
        });
        for (i, r) in (chunk_start..end).zip(results) {
            out[i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every job ran")).collect()
}

struct SeedRun {
    seed: u64,
    best: Checkpoint,
}

fn train_seeds(c: &ExperimentConfig, ds: &Dataset, root: &Path, jobs: usize) -> Result<Vec<SeedRun>> {
    run_jobs(c.seeds.len(), jobs, |i| {
        let seed = c.seeds[i];
        let dir = root.join(seed.to_string());
        let cfg = TrainConfig {
            seed,
            ..c.train.clone()
        };
        let mut snapshot = c.clone();
        snapshot.seeds = vec![seed];
        snapshot.train = cfg.clone();
        fs::create_dir_all(&dir)?;
        let out = train(&cfg, ds, Some(&dir)).with_context(|| format!("training seed {seed}"))?;
        // the experiment-level snapshot next to the training config
        fs::write(dir.join("experiment.json"), serde_json::to_string_pretty(&snapshot)?)?;
        out.best.save(dir.join("best.ckpt"))?;
        println!(
            "seed {seed}: best epoch {} (val acc {:.4}) -> {}",
            out.best_epoch,
            out.best.val_acc.unwrap_or(f64::NAN),
            dir.display()
        );
        Ok(SeedRun {
            seed,
            best: out.best,
        })
    })
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let c = a.exp.resolve()?;
    let ds = c.load_dataset()?;
    let root = c.runs_root().join(&c.name);
    train_seeds(&c, &ds, &root, a.exp.jobs)?;
    Ok(())
}

fn layout_for(task: Task) -> Layout {
    Layout {
        wasserstein: task == Task::Graph,
    }
}

fn write_reports(out: &Path, label: &str, rows: Vec<(String, MetricsReport, Sidecar)>, task: Task) -> Result<()> {
    fs::create_dir_all(out)?;
    let layout = layout_for(task);
    let refs: Vec<(String, &MetricsReport)> = rows.iter().map(|(k, r, _)| (k.clone(), r)).collect();
    fs::write(out.join("report.csv"), reports_csv(label, &refs, layout))?;
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r, _)| r.clone()).collect();
    fs::write(out.join("summary.csv"), summary_csv(&aggregate(&reports, layout)))?;
    let sidecars: Vec<&Sidecar> = rows.iter().map(|(_, _, s)| s).collect();
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&sidecars)?)?;
    Ok(())
}

fn parse_metrics(m: &Option<Vec<String>>) -> Result<Vec<Metric>> {
    Ok(match m {
        Some(list) => list.iter().map(|s| Metric::parse(s.trim())).collect::<Result<_, _>>()?,
        None => Metric::ALL.to_vec(),
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = resolve_dataset(&a.dataset, a.dataset_seed)?;
    let metrics = parse_metrics(&a.metrics)?;
    let mut rows = Vec::new();
    for (i, path) in a.checkpoint.iter().enumerate() {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        if ck.model.task != ds.task {
            bail!(
                "checkpoint {} is for a {:?} task but dataset {} is a {:?} task",
                path.display(),
                ck.model.task,
                ds.name,
                ds.task
            );
        }
        let (report, detail) = evaluate(&ck.model, &ds, &metrics, a.seed)?;
        let label = checkpoint_label(path, i);
        rows.push((
            label.clone(),
            report.clone(),
            Sidecar {
                label,
                report,
                detail,
            },
        ));
    }
    write_reports(&a.out, "seed", rows, ds.task)?;
    println!("{}", fs::read_to_string(a.out.join("summary.csv"))?);
    Ok(())
}

/// The seed directory name when the checkpoint sits in a run directory.
fn checkpoint_label(path: &Path, index: usize) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .filter(|s| s.parse::<u64>().is_ok())
        .map(str::to_owned)
        .unwrap_or_else(|| index.to_string())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut values = a.values.clone();
    values.dedup();
    if values.len() < 2 {
        bail!("a sweep needs at least two distinct values");
    }
    let base = a.exp.resolve()?;
    let ds = base.load_dataset()?;
    let pname = match a.param {
        SweepParam::RFinal => "r_final",
        SweepParam::Tau => "tau",
    };
    let root = base.runs_root().join(&base.name);
    let mut rows = Vec::new();
    for &v in &values {
        let mut c = base.clone();
        match a.param {
            SweepParam::RFinal => {
                c.train.r_final = v;
                c.train.r_initial = c.train.r_initial.max(v);
            }
            SweepParam::Tau => c.train.tau = v,
        }
        c.train.validate().with_context(|| format!("{pname} = {v}"))?;
        let runs = train_seeds(&c, &ds, &root.join(format!("{pname}_{v}")), a.exp.jobs)?;
        for run in runs {
            let (report, detail) = evaluate(&run.best.model, &ds, &c.metrics, run.seed)?;
            let label = format!("{v},{}", run.seed);
            log::info!("{pname} {v} seed {}: {:?}", run.seed, report);
            rows.push((
                label.clone(),
                report.clone(),
                Sidecar {
                    label,
                    report,
                    detail,
                },
            ));
        }
    }
    write_reports(&root, &format!("{pname},seed"), rows, ds.task)?;
    fs::rename(root.join("report.csv"), root.join("sweep.csv"))?;
    println!("sweep written to {}", root.join("sweep.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
