//! Command-line front end: `dlvkl train` and `dlvkl reproduce`.
//!
//! Settings come from built-in defaults, then an optional `key = value`
//! file (`--config`), then flags. Keys use underscores in files and
//! hyphens on the command line; unknown keys are rejected.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::likelihood::Predictive;
use crate::model::{Model, ModelConfig, Task, Variant};
use crate::numerics::{symmetric_eigen, Matrix};
use crate::report::{self, RunReport, REPORT_SCHEMA};
use crate::rng::{stream, Stream};
use crate::train::{fit, TrainSchedule};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "DLVKL_OUT";
pub const DEFAULT_OUT: &str = "runs";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Toy settings: fewer inducing points, unit length-scales, small batches
/// and a fixed iteration budget.
const TOY_M: usize = 20;
const TOY_BATCH: usize = 64;
const TOY_ITERATIONS: usize = 5000;
const TOY_STEP_TEST: usize = 200;
const TOY_CLASSIFY_N: usize = 200;
/// Datasets below this size train for fewer iterations with β = 1.
const SMALL_DATASET: usize = 2000;

#[derive(Parser, Debug)]
#[command(name = "dlvkl", version, about = "Deep latent-variable kernel learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model per seed and write model, report and trace files.
    Train(Box<TrainArgs>),
    /// Run a scripted experiment matrix on the toy data.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Settings file with one `key = value` per line; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated file with a header row; targets are the trailing columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Built-in toy data instead of a file: step | classify2d.
    #[arg(long)]
    pub toy: Option<String>,
    /// Output directory [default: $DLVKL_OUT, else "runs"].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, or an inclusive range such as 0..9 (one run per seed) [default: 0].
    #[arg(long)]
    pub seed: Option<String>,
    /// svgp | dkl | dlvkl | dlvkl-nsde [default: dlvkl-nsde].
    #[arg(long)]
    pub variant: Option<String>,
    /// regression | binary | multiclass:K | unsupervised [default: regression].
    #[arg(long)]
    pub task: Option<String>,
    /// Number of trailing target columns in --data [default: 1].
    #[arg(long)]
    pub outputs: Option<String>,
    /// Latent prior: iid | sde | hybrid [default: hybrid].
    #[arg(long)]
    pub prior: Option<String>,
    /// KL weight β in [0, 1] [default: 1 below 2000 training rows, else 1e-2].
    #[arg(long)]
    pub beta: Option<String>,
    /// Initial diffusion variance ν₀ [default: 0.01 / flow-time].
    #[arg(long)]
    pub nu0: Option<String>,
    /// Flow time T [default: 1].
    #[arg(long)]
    pub flow_time: Option<String>,
    /// Euler–Maruyama steps L [default: 10; 1 for dlvkl].
    #[arg(long)]
    pub flow_steps: Option<String>,
    /// Inducing points [default: 100, toys 20, at most the training size].
    #[arg(long)]
    pub m: Option<String>,
    /// Latent dimension [default: input dimension].
    #[arg(long)]
    pub d_z: Option<String>,
    /// Hidden units per layer [default: max(2·d_x, 10)].
    #[arg(long)]
    pub width: Option<String>,
    /// Hidden layers [default: 3].
    #[arg(long)]
    pub layers: Option<String>,
    /// Initial RBF length-scale [default: 0.1·√d_z, toys 1].
    #[arg(long)]
    pub lengthscale: Option<String>,
    /// Initial Gaussian noise variance [default: 0.1].
    #[arg(long)]
    pub noise_variance: Option<String>,
    /// Latent draws averaged at prediction [default: 10].
    #[arg(long)]
    pub s_predict: Option<String>,
    /// Monte Carlo draws for classification likelihoods in training [default: 8].
    #[arg(long)]
    pub mc_train: Option<String>,
    /// Monte Carlo draws for classification predictions [default: 64].
    #[arg(long)]
    pub mc_eval: Option<String>,
    /// Adam iterations [default: 3000 below 2000 training rows, else 20000; toys 5000].
    #[arg(long)]
    pub iterations: Option<String>,
    /// Minibatch size [default: 256, toys min(64, n)].
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Adam learning rate [default: 5e-3].
    #[arg(long)]
    pub learning_rate: Option<String>,
    /// Record the ELBO every this many iterations [default: 10].
    #[arg(long)]
    pub eval_every: Option<String>,
    /// Held-out fraction for --data and classify2d [default: 0.1].
    #[arg(long)]
    pub test_frac: Option<String>,
    /// Toy training size [default: 50 for step, 200 for classify2d].
    #[arg(long)]
    pub toy_n: Option<String>,
    /// Observation noise std of the step toy [default: 0].
    #[arg(long)]
    pub toy_noise: Option<String>,
}

impl TrainArgs {
    fn flag_settings(&self) -> Vec<(&'static str, Option<String>)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        vec![
            ("data", path(&self.data)),
            ("toy", self.toy.clone()),
            ("out", path(&self.out)),
            ("seed", self.seed.clone()),
            ("variant", self.variant.clone()),
            ("task", self.task.clone()),
            ("outputs", self.outputs.clone()),
            ("prior", self.prior.clone()),
            ("beta", self.beta.clone()),
            ("nu0", self.nu0.clone()),
            ("flow_time", self.flow_time.clone()),
            ("flow_steps", self.flow_steps.clone()),
            ("m", self.m.clone()),
            ("d_z", self.d_z.clone()),
            ("width", self.width.clone()),
            ("layers", self.layers.clone()),
            ("lengthscale", self.lengthscale.clone()),
            ("noise_variance", self.noise_variance.clone()),
            ("s_predict", self.s_predict.clone()),
            ("mc_train", self.mc_train.clone()),
            ("mc_eval", self.mc_eval.clone()),
            ("iterations", self.iterations.clone()),
            ("batch_size", self.batch_size.clone()),
            ("learning_rate", self.learning_rate.clone()),
            ("eval_every", self.eval_every.clone()),
            ("test_frac", self.test_frac.clone()),
            ("toy_n", self.toy_n.clone()),
            ("toy_noise", self.toy_noise.clone()),
        ]
    }

    /// Settings file contents overlaid with the given flags.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::read(p)?,
            None => Settings::default(),
        };
        for (k, v) in self.flag_settings() {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        Ok(s)
    }
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    /// fig2 | fig3 | prop1 | beta-sweep | flow-sweep
    pub case: String,
    /// Output directory [default: $DLVKL_OUT, else "runs"].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed shared by every run of the case.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the iteration budget of every run.
    #[arg(long)]
    pub iterations: Option<usize>,
}

const MODEL_KEYS: &[&str] = &[
    "variant",
    "prior",
    "beta",
    "nu0",
    "flow_time",
    "flow_steps",
    "m",
    "d_z",
    "width",
    "layers",
    "lengthscale",
    "noise_variance",
    "s_predict",
    "mc_train",
    "mc_eval",
    "whiten",
];

const RUN_KEYS: &[&str] = &[
    "data",
    "toy",
    "out",
    "seed",
    "task",
    "outputs",
    "iterations",
    "batch_size",
    "learning_rate",
    "eval_every",
    "test_frac",
    "toy_n",
    "toy_noise",
];

/// Raw `key = value` settings with validated key names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = key.trim().replace('-', "_");
        if !MODEL_KEYS.contains(&key.as_str()) && !RUN_KEYS.contains(&key.as_str()) {
            return Err(Error::config(key, "unknown setting"));
        }
        self.0.insert(key, value.into().trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataChoice {
    Csv { path: PathBuf, outputs: usize, task: Task },
    ToyStep { n: usize, noise: f64 },
    ToyClassify2d { n: usize },
}

impl DataChoice {
    fn is_toy(&self) -> bool {
        !matches!(self, DataChoice::Csv { .. })
    }

    fn label(&self) -> String {
        match self {
            DataChoice::Csv { path, .. } => path.display().to_string(),
            DataChoice::ToyStep { .. } => "toy:step".into(),
            DataChoice::ToyClassify2d { .. } => "toy:classify2d".into(),
        }
    }
}

/// A fully validated run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataChoice,
    pub variant: Variant,
    pub test_frac: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub eval_every: usize,
    /// Explicitly given model settings, applied over the defaults.
    pub model_overrides: Vec<(String, String)>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse '{v}'")))
}

/// `7`, or an inclusive range `a..b`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    match s.split_once("..") {
        None => Ok(vec![parse_num("seed", s)?]),
        Some((a, b)) => {
            let a: u64 = parse_num("seed", a)?;
            let b: u64 = parse_num("seed", b.trim_start_matches('='))?;
            if b < a {
                return Err(Error::config("seed", "empty seed range"));
            }
            Ok((a..=b).collect())
        }
    }
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Replaces entries of `base` by `overrides` (keys as in
/// [`ModelConfig::to_pairs`]).
impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let num = |key: &str| -> Result<Option<usize>> { s.get(key).map(|v| parse_num(key, v)).transpose() };
        let real = |key: &str| -> Result<Option<f64>> { s.get(key).map(|v| parse_num(key, v)).transpose() };
        let task = s.get("task").map(Task::parse).transpose()?;
        let data = match (s.get("data"), s.get("toy")) {
            (Some(_), Some(_)) => return Err(Error::config("data", "give either a data file or a toy, not both")),
            (None, None) => return Err(Error::config("data", "a data file or a toy is required")),
            (Some(p), None) => DataChoice::Csv {
                path: PathBuf::from(p),
                outputs: num("outputs")?.unwrap_or(1),
                task: task.unwrap_or(Task::Regression),
            },
            (None, Some(toy)) => {
                if task.is_some() || s.get("outputs").is_some() {
                    return Err(Error::config("task", "toy data fixes the task and outputs"));
                }
                match toy {
                    "step" => DataChoice::ToyStep {
                        n: num("toy_n")?.unwrap_or(data::TOY_STEP_N),
                        noise: real("toy_noise")?.unwrap_or(0.0),
                    },
                    "classify2d" => DataChoice::ToyClassify2d {
                        n: num("toy_n")?.unwrap_or(TOY_CLASSIFY_N),
                    },
                    other => return Err(Error::config("toy", format!("unknown toy '{other}' (step | classify2d)"))),
                }
            }
        };
        if !data.is_toy() && (s.get("toy_n").is_some() || s.get("toy_noise").is_some()) {
            return Err(Error::config("toy_n", "only meaningful with a toy"));
        }
        let variant = Variant::parse(s.get("variant").unwrap_or("dlvkl-nsde"))?;
        let model_overrides: Vec<(String, String)> = MODEL_KEYS
            .iter()
            .filter(|k| **k != "variant")
            .filter_map(|k| s.get(k).map(|v| (k.to_string(), v.to_string())))
            .collect();
        // Type-check model settings before any data is touched.
        ModelConfig::new(variant, Task::Regression, 1, 1).with_overrides(&model_overrides)?;
        let test_frac = real("test_frac")?.unwrap_or(0.1);
        if !(test_frac > 0.0 && test_frac < 1.0) {
            return Err(Error::config("test_frac", "must lie strictly between 0 and 1"));
        }
        let cfg = RunConfig {
            data,
            variant,
            test_frac,
            seeds: parse_seeds(s.get("seed").unwrap_or("0"))?,
            out: s.get("out").map(PathBuf::from).unwrap_or_else(default_out),
            iterations: num("iterations")?,
            batch_size: num("batch_size")?,
            learning_rate: real("learning_rate")?.unwrap_or(5e-3),
            eval_every: num("eval_every")?.unwrap_or(10),
            model_overrides,
        };
        TrainSchedule {
            iterations: cfg.iterations.unwrap_or(1),
            batch_size: cfg.batch_size.unwrap_or(1),
            learning_rate: cfg.learning_rate,
            seed: 0,
            eval_every: cfg.eval_every,
            trainable: None,
        }
        .validate()?;
        Ok(cfg)
    }

    fn override_of(&self, key: &str) -> Option<&str> {
        self.model_overrides
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Standardized train/test sets for `seed`.
    pub fn load_data(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.data {
            DataChoice::Csv { path, outputs, task } => {
                let ds = data::load_table(path, *outputs, *task)?;
                data::split(&ds, self.test_frac, seed)?
            }
            DataChoice::ToyStep { n, noise } => (
                data::toy_step(*n, seed, *noise)?,
                data::toy_step_heldout(TOY_STEP_TEST, seed, *noise)?,
            ),
            DataChoice::ToyClassify2d { n } => data::split(&data::toy_classify2d(*n, seed)?, self.test_frac, seed)?,
        };
        let (train, stats) = data::standardize(&train)?;
        let test = data::apply_standardization(&test, &stats)?;
        Ok((train, test))
    }

    /// Model configuration for a standardized training set.
    pub fn model_config(&self, train: &Dataset, seed: u64) -> Result<ModelConfig> {
        let n = train.len();
        let mut c = ModelConfig::new(self.variant, train.task, train.d_x(), train.d_y());
        c.seed = seed;
        c.m = if self.data.is_toy() { TOY_M } else { 100 }.min(n);
        if self.data.is_toy() {
            c.lengthscale = 1.0;
        }
        c.beta = if n < SMALL_DATASET { 1.0 } else { 1e-2 };
        let time: f64 = match self.override_of("flow_time") {
            Some(v) => parse_num("flow_time", v)?,
            None => c.flow_time,
        };
        c.nu0 = 0.01 / time;
        let c = c.with_overrides(&self.model_overrides)?;
        c.validate()?;
        Ok(c)
    }

    pub fn schedule(&self, n: usize, seed: u64) -> TrainSchedule {
        let toy = self.data.is_toy();
        let iterations = self.iterations.unwrap_or(if toy {
            TOY_ITERATIONS
        } else if n < SMALL_DATASET {
            3000
        } else {
            20000
        });
        let batch_size = self
            .batch_size
            .unwrap_or(if toy { TOY_BATCH } else { 256 })
            .min(n);
        TrainSchedule {
            iterations,
            batch_size,
            learning_rate: self.learning_rate,
            seed,
            eval_every: self.eval_every,
            trainable: None,
        }
    }

    /// Directory of the run for `seed`.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        if self.seeds.len() == 1 {
            self.out.clone()
        } else {
            self.out.join(format!("seed-{seed}"))
        }
    }
}

/// Everything produced by one trained run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub model: Model,
    pub train: Dataset,
    pub test: Dataset,
}

/// Error from a run, with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss
        | Error::NonFiniteGradient
        | Error::FactorizationFailure { .. }
        | Error::NotSymmetric { .. } => EXIT_NUMERICAL,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::SchemaMismatch(_)
        | Error::EmptyDataset
        | Error::InvalidLabel { .. }
        | Error::DimensionMismatch(_) => EXIT_DATA,
        Error::Config { .. } | Error::UnknownCase(_) | Error::ModelFormat(_) | Error::ProjectionNotFitted => {
            EXIT_USAGE
        }
    }
}

fn config_echo(cfg: &RunConfig, mc: &ModelConfig, sched: &TrainSchedule) -> BTreeMap<String, String> {
    let mut echo: BTreeMap<String, String> = mc.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    echo.insert("data".into(), cfg.data.label());
    echo.insert("test_frac".into(), cfg.test_frac.to_string());
    echo.insert("iterations".into(), sched.iterations.to_string());
    echo.insert("batch_size".into(), sched.batch_size.to_string());
    echo.insert("learning_rate".into(), sched.learning_rate.to_string());
    echo.insert("eval_every".into(), sched.eval_every.to_string());
    if let DataChoice::ToyStep { n, noise } = cfg.data {
        echo.insert("toy_n".into(), n.to_string());
        echo.insert("toy_noise".into(), noise.to_string());
    }
    echo
}

/// Test-set predictions: inputs, targets, then predictive mean and
/// variance columns (or class probabilities).
fn predictions_csv(x: &Matrix, y: &Matrix, pred: &Predictive) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
    header.extend((0..y.cols()).map(|j| format!("y{j}")));
    let (a, b) = match pred {
        Predictive::Gaussian { mean, var } => {
            header.extend((0..mean.cols()).map(|j| format!("mean{j}")));
            header.extend((0..var.cols()).map(|j| format!("var{j}")));
            (mean, Some(var))
        }
        Predictive::Classes { probs } => {
            header.extend((0..probs.cols()).map(|j| format!("p{j}")));
            (probs, None)
        }
    };
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..x.rows() {
        let mut row: Vec<String> = x.row(i).iter().chain(y.row(i)).chain(a.row(i)).map(f64::to_string).collect();
        if let Some(b) = b {
            row.extend(b.row(i).iter().map(f64::to_string));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains and evaluates one seed, writing `model.txt`, `report.json`,
/// `trace.csv` and `predictions.csv` into `dir`. On a numerical abort the
/// partial trace is still written.
pub fn run_seed(cfg: &RunConfig, seed: u64, dir: &Path, command: &str) -> Result<RunOutcome> {
    let started = Instant::now();
    let (train, test) = cfg.load_data(seed)?;
    let mc = cfg.model_config(&train, seed)?;
    let sched = cfg.schedule(train.len(), seed);
    let model = Model::init(mc.clone(), model_input(&train, &mc))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fitted = match fit(model, model_input(&train, &mc), &train.y, &sched) {
        Ok(f) => f,
        Err(abort) => {
            write_file(&dir.join("trace.csv"), &report::trace_csv(&abort.trace))?;
            return Err(abort.error);
        }
    };
    let model = fitted.model;
    let pred = model.predict(model_input(&test, &mc), mc.s_predict, &mut stream(seed, Stream::Predict))?;
    let metrics = report::score(&pred, &test.y)?;
    let collapse = if mc.variant.is_stochastic() && test.len() >= 10 {
        Some(model.collapse_diagnostic(model_input(&test, &mc), &mut stream(seed, Stream::Density))?)
    } else {
        None
    };
    let report = RunReport {
        schema: REPORT_SCHEMA.into(),
        command: command.into(),
        dataset: cfg.data.label(),
        seed,
        config: config_echo(cfg, &mc, &sched),
        n_train: train.len(),
        n_test: test.len(),
        trace: fitted.trace,
        metrics,
        collapse,
        warnings: train.warnings.clone(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    model.save(&dir.join("model.txt"))?;
    report::write_report(&report, dir)?;
    write_file(&dir.join("predictions.csv"), &predictions_csv(&test.x, &test.y, &pred.summary))?;
    Ok(RunOutcome {
        report,
        model,
        train,
        test,
    })
}

fn model_input<'a>(ds: &'a Dataset, mc: &ModelConfig) -> &'a Matrix {
    if mc.task == Task::Unsupervised {
        &ds.y
    } else {
        &ds.x
    }
}

fn metric_summary(r: &RunReport) -> String {
    let mut s = String::new();
    if let Some(v) = r.metrics.rmse {
        write!(s, "rmse {v:.4} ").unwrap();
    }
    if let Some(v) = r.metrics.accuracy {
        write!(s, "accuracy {v:.4} ").unwrap();
    }
    write!(s, "nll {:.4}", r.metrics.nll).unwrap();
    if let Some(c) = &r.collapse {
        write!(s, " collapsed {}", c.collapsed).unwrap();
    }
    s
}

pub fn cmd_train(args: &TrainArgs) -> std::result::Result<Vec<RunReport>, CliError> {
    let cfg = RunConfig::from_settings(&args.settings()?)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let dir = cfg.run_dir(seed);
        let out = run_seed(&cfg, seed, &dir, "train")?;
        println!("seed {seed}: {} -> {}", metric_summary(&out.report), dir.display());
        reports.push(out.report);
    }
    if reports.len() > 1 {
        let rmse: Vec<f64> = reports.iter().filter_map(|r| r.metrics.rmse).collect();
        if !rmse.is_empty() {
            let (mean, std) = mean_std(&rmse);
            println!("rmse over {} seeds: {mean:.4} ± {std:.4}", rmse.len());
        }
        let (mean, std) = mean_std(&reports.iter().map(|r| r.metrics.nll).collect::<Vec<_>>());
        println!("nll over {} seeds: {mean:.4} ± {std:.4}", reports.len());
    }
    Ok(reports)
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Ratio of the largest to the smallest eigenvalue of the covariance of
/// the rows of `z`; 1 for one column.
pub fn latent_anisotropy(z: &Matrix) -> Result<f64> {
    let (n, d) = z.shape();
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let mean: Vec<f64> = (0..d).map(|j| z.col(j).iter().sum::<f64>() / n as f64).collect();
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (z[(i, a)] - mean[a]) * (z[(i, b)] - mean[b]) / n as f64;
            }
        }
    }
    let (vals, _) = symmetric_eigen(&cov)?;
    let max = vals.iter().copied().fold(f64::MIN, f64::max);
    let min = vals.iter().copied().fold(f64::MAX, f64::min);
    Ok(max / min.max(f64::MIN_POSITIVE))
}

/// One run of a reproduce case.
struct CaseRun {
    name: &'static str,
    settings: Vec<(&'static str, String)>,
}

fn case_runs(case: &str) -> Result<(&'static str, Vec<CaseRun>)> {
    let run = |name, kv: &[(&'static str, &str)]| CaseRun {
        name,
        settings: kv.iter().map(|(k, v)| (*k, v.to_string())).collect(),
    };
    let betas = [("beta-1", "1"), ("beta-1e-1", "1e-1"), ("beta-1e-2", "1e-2"), ("beta-1e-4", "1e-4")];
    Ok(match case {
        "fig2" => (
            "step",
            vec![
                run("dlvkl-iid", &[("variant", "dlvkl"), ("prior", "iid"), ("beta", "1")]),
                run("dlvkl-sde", &[("variant", "dlvkl"), ("prior", "sde")]),
                run("dlvkl-hybrid-1e-2", &[("variant", "dlvkl"), ("prior", "hybrid"), ("beta", "1e-2")]),
                run("nsde-hybrid-1e-2", &[("variant", "dlvkl-nsde"), ("prior", "hybrid"), ("beta", "1e-2")]),
            ],
        ),
        "prop1" => (
            "step",
            vec![
                run("dlvkl-iid", &[("variant", "dlvkl"), ("prior", "iid"), ("beta", "1")]),
                run("dlvkl-sde", &[("variant", "dlvkl"), ("prior", "sde")]),
            ],
        ),
        "fig3" => {
            let mut runs = vec![run("svgp", &[("variant", "svgp")]), run("dkl", &[("variant", "dkl")])];
            runs.extend(
                betas
                    .iter()
                    .map(|(name, b)| run(name, &[("variant", "dlvkl-nsde"), ("prior", "hybrid"), ("beta", b)])),
            );
            ("classify2d", runs)
        }
        "beta-sweep" => (
            "step",
            betas
                .iter()
                .map(|(name, b)| run(name, &[("variant", "dlvkl-nsde"), ("prior", "hybrid"), ("beta", b)]))
                .collect(),
        ),
        "flow-sweep" => (
            "classify2d",
            [("t1-l1", "1", "1"), ("t1-l15", "1", "15"), ("t15-l10", "15", "10"), ("t15-l50", "15", "50")]
                .iter()
                .map(|(name, t, l)| {
                    run(
                        name,
                        &[("variant", "dlvkl-nsde"), ("beta", "1e-2"), ("flow_time", t), ("flow_steps", l)],
                    )
                })
                .collect(),
        ),
        other => return Err(Error::UnknownCase(other.to_string())),
    })
}

pub const CASES: &[&str] = &["fig2", "fig3", "prop1", "beta-sweep", "flow-sweep"];

/// Latent means and prediction grid of a trained toy model, as CSV text.
fn toy_plot_files(out: &RunOutcome, seed: u64) -> Result<(String, String)> {
    let model = &out.model;
    let z = model.latent_mean(&out.train.x)?;
    let mut latent = String::new();
    let d_x = out.train.d_x();
    let cols: Vec<String> = (0..d_x)
        .map(|j| format!("x{j}"))
        .chain((0..z.cols()).map(|j| format!("z{j}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    latent.push_str(&cols.join(","));
    latent.push('\n');
    for i in 0..z.rows() {
        let row: Vec<String> = out.train.x.row(i).iter().chain(z.row(i)).chain(out.train.y.row(i)).map(f64::to_string).collect();
        latent.push_str(&row.join(","));
        latent.push('\n');
    }
    let grid = if d_x == 1 {
        Matrix::column(&(0..200).map(|i| -2.5 + 5.0 * i as f64 / 199.0).collect::<Vec<_>>())
    } else {
        let k = 41;
        let ticks: Vec<f64> = (0..k).map(|i| -2.5 + 5.0 * i as f64 / (k - 1) as f64).collect();
        Matrix::from_rows(&ticks.iter().flat_map(|&a| ticks.iter().map(move |&b| vec![a, b])).collect::<Vec<_>>())
    };
    let pred = model.predict(&grid, model.config.s_predict, &mut stream(seed, Stream::Predict))?;
    let gz = model.latent_mean(&grid)?;
    let mut text = String::new();
    let mut header: Vec<String> = (0..d_x).map(|j| format!("x{j}")).collect();
    header.extend((0..gz.cols()).map(|j| format!("z{j}")));
    match &pred.summary {
        Predictive::Gaussian { .. } => header.extend(["mean".to_string(), "var".to_string()]),
        Predictive::Classes { probs } => header.extend((0..probs.cols()).map(|j| format!("p{j}"))),
    }
    text.push_str(&header.join(","));
    text.push('\n');
    for i in 0..grid.rows() {
        let mut row: Vec<f64> = grid.row(i).iter().chain(gz.row(i)).copied().collect();
        match &pred.summary {
            Predictive::Gaussian { mean, var } => row.extend([mean[(i, 0)], var[(i, 0)]]),
            Predictive::Classes { probs } => row.extend(probs.row(i)),
        }
        let row: Vec<String> = row.iter().map(f64::to_string).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    Ok((latent, text))
}

/// A row of a case summary.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub report: RunReport,
    pub latent_anisotropy: f64,
}

pub fn cmd_reproduce(args: &ReproduceArgs) -> std::result::Result<Vec<CaseResult>, CliError> {
    let (toy, runs) = case_runs(&args.case)?;
    let root = args.out.clone().unwrap_or_else(default_out).join(&args.case);
    let mut results = Vec::new();
    for r in runs {
        let mut s = Settings::default();
        s.set("toy", toy)?;
        s.set("seed", args.seed.to_string())?;
        if let Some(it) = args.iterations {
            s.set("iterations", it.to_string())?;
        }
        for (k, v) in &r.settings {
            s.set(k, v.clone())?;
        }
        let cfg = RunConfig::from_settings(&s)?;
        let dir = root.join(r.name);
        let out = run_seed(&cfg, args.seed, &dir, &format!("reproduce {}", args.case))?;
        let (latent, grid) = toy_plot_files(&out, args.seed)?;
        write_file(&dir.join("latent.csv"), &latent)?;
        write_file(&dir.join("grid.csv"), &grid)?;
        let aniso = latent_anisotropy(&out.model.latent_mean(&out.train.x)?)?;
        println!("{}: {} latent anisotropy {aniso:.3e}", r.name, metric_summary(&out.report));
        results.push(CaseResult {
            name: r.name.to_string(),
            report: out.report,
            latent_anisotropy: aniso,
        });
    }
    write_file(&root.join("summary.csv"), &case_summary_csv(&results))?;
    Ok(results)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn case_summary_csv(results: &[CaseResult]) -> String {
    let mut s = String::from("run,variant,prior,beta,flow_time,flow_steps,rmse,nll,accuracy,kl_z,mean_spread,collapsed,latent_anisotropy\n");
    for r in results {
        let c = &r.report.config;
        let get = |k: &str| c.get(k).cloned().unwrap_or_default();
        let col = r.report.collapse;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.name,
            get("variant"),
            get("prior"),
            get("beta"),
            get("flow_time"),
            get("flow_steps"),
            opt(r.report.metrics.rmse),
            r.report.metrics.nll,
            opt(r.report.metrics.accuracy),
            opt(col.map(|c| c.kl_z)),
            opt(col.map(|c| c.mean_spread)),
            col.map(|c| c.collapsed.to_string()).unwrap_or_default(),
            r.latent_anisotropy
        )
        .unwrap();
    }
    s
}

/// Parses `args` (including the program name) and runs the command;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Reproduce(a) => cmd_reproduce(a).map(|_| ()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
