//! Tabular ingestion, standardization, splitting and toy generators.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::likelihood::check_labels;
use crate::model::Task;
use crate::numerics::Matrix;
use crate::rng::{permutation, stream, Stream};

/// Per-column affine maps `v ↦ (v − mean)/std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    /// Present when outputs are continuous.
    pub y_mean: Option<Vec<f64>>,
    pub y_std: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub task: Task,
    pub stats: Option<Standardization>,
    pub warnings: Vec<String>,
    /// Rows dropped at ingestion because of non-finite values.
    pub rejected_rows: usize,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix, task: Task) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::dims(format!("{} input rows vs {} output rows", x.rows(), y.rows())));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::config("data", "non-finite entries"));
        }
        check_labels(task.likelihood_kind(), &y)?;
        Ok(Dataset {
            x,
            y,
            task,
            stats: None,
            warnings: Vec::new(),
            rejected_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn d_y(&self) -> usize {
        self.y.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            task: self.task,
            stats: self.stats.clone(),
            warnings: self.warnings.clone(),
            rejected_rows: 0,
        }
    }

    fn continuous_outputs(&self) -> bool {
        !self.task.is_classification()
    }
}

/// Reads a comma-separated file with a header row; the last `outputs`
/// columns are targets.
pub fn load_table(path: impl AsRef<Path>, outputs: usize, task: Task) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let width = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .len();
    if outputs == 0 || outputs >= width {
        return Err(Error::SchemaMismatch(format!(
            "{outputs} output columns declared but the header has {width} columns"
        )));
    }
    let d_x = width - outputs;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut rejected = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(Error::SchemaMismatch(format!(
                "line {line} has {} columns, header has {width}",
                record.len()
            )));
        }
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("'{cell}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            rejected += 1;
            continue;
        }
        xs.extend_from_slice(&row[..d_x]);
        ys.extend_from_slice(&row[d_x..]);
    }
    let n = ys.len() / outputs;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut ds = Dataset::new(Matrix::from_vec(n, d_x, xs)?, Matrix::from_vec(n, outputs, ys)?, task)?;
    ds.rejected_rows = rejected;
    if rejected > 0 {
        ds.warnings.push(format!("{rejected} rows with non-finite values rejected"));
    }
    Ok(ds)
}

/// Writes inputs then outputs as `x0,..,y0,..` columns.
pub fn write_csv(path: impl AsRef<Path>, x: &Matrix, y: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let header: Vec<String> = (0..x.cols())
        .map(|j| format!("x{j}"))
        .chain((0..y.cols()).map(|j| format!("y{j}")))
        .collect();
    w.write_record(&header).map_err(io)?;
    for i in 0..x.rows() {
        w.write_record(x.row(i).iter().chain(y.row(i)).map(|v| v.to_string()))
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn column_stats(m: &Matrix, warnings: &mut Vec<String>, what: &str) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut means = Vec::with_capacity(m.cols());
    let mut stds = Vec::with_capacity(m.cols());
    for j in 0..m.cols() {
        let col = m.col(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 0.0 {
            means.push(mean);
            stds.push(std);
        } else {
            warnings.push(format!("{what} column {j} is constant; left unchanged"));
            means.push(0.0);
            stds.push(1.0);
        }
    }
    (means, stds)
}

fn affine(m: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for ((v, mu), s) in out.row_mut(i).iter_mut().zip(mean).zip(std) {
            *v = (*v - mu) / s;
        }
    }
    out
}

/// Zero-mean, unit (population) variance columns. Outputs are scaled only
/// for continuous tasks. A constant column is left unchanged and records a
/// warning.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    if ds.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let mut warnings = ds.warnings.clone();
    let (x_mean, x_std) = column_stats(&ds.x, &mut warnings, "input");
    let (y_mean, y_std) = if ds.continuous_outputs() {
        let (m, s) = column_stats(&ds.y, &mut warnings, "output");
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    let stats = Standardization {
        x_mean,
        x_std,
        y_mean,
        y_std,
    };
    let mut out = apply_standardization(ds, &stats)?;
    out.warnings = warnings;
    Ok((out, stats))
}

/// Applies training-set statistics to another dataset.
pub fn apply_standardization(ds: &Dataset, stats: &Standardization) -> Result<Dataset> {
    if stats.x_mean.len() != ds.d_x() {
        return Err(Error::dims("standardization statistics do not match the input columns"));
    }
    let y = match (&stats.y_mean, &stats.y_std) {
        (Some(m), Some(s)) => {
            if m.len() != ds.d_y() {
                return Err(Error::dims("standardization statistics do not match the output columns"));
            }
            affine(&ds.y, m, s)
        }
        _ => ds.y.clone(),
    };
    Ok(Dataset {
        x: affine(&ds.x, &stats.x_mean, &stats.x_std),
        y,
        task: ds.task,
        stats: Some(stats.clone()),
        warnings: ds.warnings.clone(),
        rejected_rows: ds.rejected_rows,
    })
}

/// Random disjoint split with `⌈n·test_frac⌉` test rows; row order within
/// each part follows the original file.
pub fn split(ds: &Dataset, test_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::config("test_frac", "must lie strictly between 0 and 1"));
    }
    let n = ds.len();
    let n_test = ((n as f64) * test_frac).ceil() as usize;
    let perm = permutation(&mut stream(seed, Stream::Split), n);
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((ds.select(&train), ds.select(&test)))
}

/// The piecewise step target: `cos(5x)·e^{−x/2} + 1` left of zero, `−1`
/// from zero on.
pub fn step_function(x: f64) -> f64 {
    if x < 0.0 {
        (5.0 * x).cos() * (-0.5 * x).exp() + 1.0
    } else {
        -1.0
    }
}

pub const TOY_STEP_N: usize = 50;
pub const TOY_STEP_RANGE: (f64, f64) = (-1.5, 1.5);

fn step_sample<R: Rng>(rng: &mut R, n: usize, noise_std: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let (lo, hi) = TOY_STEP_RANGE;
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| step_function(x) + noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(Matrix::column(&xs), Matrix::column(&ys), Task::Regression)
}

/// `n` uniform draws on the toy interval with optional Gaussian noise.
pub fn toy_step(n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    step_sample(&mut stream(seed, Stream::Data), n, noise_std)
}

/// An independent draw from the same distribution, for held-out scoring.
pub fn toy_step_heldout(n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    step_sample(&mut stream(seed, Stream::Split), n, noise_std)
}

pub const MOONS_NOISE: f64 = 0.1;

/// Two interleaved crescents: class 0 on `(cos t, sin t)`, class 1 on
/// `(1 − cos t, ½ − sin t)` with `t ~ U[0, π]`, plus isotropic noise of
/// std [`MOONS_NOISE`]. Even rows are class 0, odd rows class 1.
pub fn toy_classify2d(n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = stream(seed, Stream::Data);
    let mut x = Matrix::zeros(n, 2);
    let mut y = Matrix::zeros(n, 1);
    for i in 0..n {
        let t = rng.random_range(0.0..PI);
        let (a, b) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = a + MOONS_NOISE * e0;
        x[(i, 1)] = b + MOONS_NOISE * e1;
        y[(i, 0)] = (i % 2) as f64;
    }
    Dataset::new(x, y, Task::BinaryClass)
}
