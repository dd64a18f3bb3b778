//! Test-set metrics and run reports.
//!
//! A run writes two files. `report.json` is a [`RunReport`] serialized as
//! pretty-printed JSON. `trace.csv` holds the training trace: the header
//! `iteration,elbo`, then one row per trace point with the iteration as an
//! integer and the ELBO in Rust's shortest round-trip float notation, each
//! line ending in `\n`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradengine::log_sum_exp;
use crate::likelihood::Predictive;
use crate::model::{CollapseReport, Model, Prediction};
use crate::numerics::Matrix;
use crate::train::TracePoint;

pub const REPORT_SCHEMA: &str = "dlvkl-report v1";
pub const TRACE_HEADER: &str = "iteration,elbo";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Root mean squared error of the predictive mean (continuous outputs).
    pub rmse: Option<f64>,
    /// Mean negative log predictive density or probability.
    pub nll: f64,
    /// Fraction of argmax hits (classification).
    pub accuracy: Option<f64>,
    pub n_test: usize,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Metrics of a prediction against targets `y`. Regression densities use
/// the full mixture over latent draws.
pub fn score(pred: &Prediction, y: &Matrix) -> Result<Metrics> {
    let n = y.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    match &pred.summary {
        Predictive::Gaussian { mean, .. } => {
            if mean.shape() != y.shape() {
                return Err(Error::dims("prediction and targets differ in shape"));
            }
            let sse: f64 = mean.zip_map(y, |m, t| (m - t) * (m - t)).sum();
            let rmse = (sse / y.len() as f64).sqrt();
            let mut nll = 0.0;
            let mut logs = vec![0.0; pred.components.len()];
            let ln_s = (pred.components.len() as f64).ln();
            for i in 0..n {
                for (l, c) in logs.iter_mut().zip(&pred.components) {
                    let Predictive::Gaussian { mean, var } = c else {
                        return Err(Error::dims("mixed predictive kinds"));
                    };
                    *l = mean
                        .row(i)
                        .iter()
                        .zip(var.row(i))
                        .zip(y.row(i))
                        .map(|((m, v), t)| -0.5 * (LN_2PI + v.ln() + (t - m) * (t - m) / v))
                        .sum();
                }
                nll -= log_sum_exp(&logs) - ln_s;
            }
            Ok(Metrics {
                rmse: Some(rmse),
                nll: nll / n as f64,
                accuracy: None,
                n_test: n,
            })
        }
        Predictive::Classes { probs } => {
            if probs.rows() != n || y.cols() != 1 {
                return Err(Error::dims("class probabilities and labels differ in shape"));
            }
            let mut nll = 0.0;
            let mut hits = 0;
            for i in 0..n {
                let label = y[(i, 0)] as usize;
                let row = probs.row(i);
                nll -= row[label].max(f64::MIN_POSITIVE).ln();
                let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                if best == label {
                    hits += 1;
                }
            }
            Ok(Metrics {
                rmse: None,
                nll: nll / n as f64,
                accuracy: Some(hits as f64 / n as f64),
                n_test: n,
            })
        }
    }
}

/// Predicts `test` with `s` latent draws and scores it.
pub fn evaluate<R: Rng + ?Sized>(model: &Model, test: &Dataset, s: usize, rng: &mut R) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = model.predict(model.encoder_input(&test.x, &test.y), s, rng)?;
    score(&pred, &test.y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub dataset: String,
    pub seed: u64,
    /// Model and training settings as `key = value` text.
    pub config: BTreeMap<String, String>,
    pub n_train: usize,
    pub n_test: usize,
    pub trace: Vec<TracePoint>,
    pub metrics: Metrics,
    pub collapse: Option<CollapseReport>,
    pub warnings: Vec<String>,
    pub wall_time_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::SchemaMismatch(format!("unknown report schema '{}'", r.schema)));
        }
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for t in trace {
        writeln!(out, "{},{}", t.iteration, t.elbo).expect("string write");
    }
    out
}

/// Writes `report.json` and `trace.csv` into `dir`, creating it if needed.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    std::fs::write(&json, report.to_json()).map_err(|e| Error::io(&json, e))?;
    let csv = dir.join("trace.csv");
    std::fs::write(&csv, trace_csv(&report.trace)).map_err(|e| Error::io(&csv, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Predictive {
        Predictive::Gaussian {
            mean: Matrix::column(&mean),
            var: Matrix::column(&var),
        }
    }

    fn single(p: Predictive) -> Prediction {
        Prediction {
            components: vec![p.clone()],
            summary: p,
        }
    }

    #[test]
    fn perfect_constant_predictor() {
        let p = single(gaussian(vec![2.0; 5], vec![0.1; 5]));
        let m = score(&p, &Matrix::column(&[2.0; 5])).unwrap();
        assert_eq!(m.rmse, Some(0.0));
        assert_eq!(m.n_test, 5);
        assert!(m.accuracy.is_none());
    }

    #[test]
    fn standard_normal_nll_at_mode() {
        let p = single(gaussian(vec![0.0; 3], vec![1.0; 3]));
        let m = score(&p, &Matrix::column(&[0.0; 3])).unwrap();
        assert!((m.nll - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((m.nll - 0.9189).abs() < 1e-4);
    }

    #[test]
    fn mixture_nll_matches_direct_density() {
        let a = gaussian(vec![0.0, 1.0], vec![1.0, 0.5]);
        let b = gaussian(vec![2.0, -1.0], vec![0.25, 2.0]);
        let pred = Prediction {
            components: vec![a, b],
            summary: gaussian(vec![1.0, 0.0], vec![1.0, 1.0]),
        };
        let y = [0.5, 0.3];
        let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let want = -((0.5 * (pdf(y[0], 0.0, 1.0) + pdf(y[0], 2.0, 0.25))).ln()
            + (0.5 * (pdf(y[1], 1.0, 0.5) + pdf(y[1], -1.0, 2.0))).ln())
            / 2.0;
        let m = score(&pred, &Matrix::column(&y)).unwrap();
        assert!((m.nll - want).abs() < 1e-12);
    }

    #[test]
    fn classification_metrics() {
        let probs = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.4, 0.6], vec![0.7, 0.3]]);
        let p = single(Predictive::Classes { probs });
        let m = score(&p, &Matrix::column(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(m.accuracy, Some(2.0 / 3.0));
        let want = -(0.9f64.ln() + 0.6f64.ln() + 0.3f64.ln()) / 3.0;
        assert!((m.nll - want).abs() < 1e-15);
        assert!(m.rmse.is_none());
    }

    #[test]
    fn metrics_ignore_row_order() {
        let a = gaussian(vec![0.1, 0.5, -0.3], vec![0.2, 1.0, 0.7]);
        let b = gaussian(vec![0.4, -0.5, 0.0], vec![0.3, 0.1, 0.9]);
        let y = Matrix::column(&[0.0, 1.0, -1.0]);
        let pred = Prediction {
            components: vec![a.clone(), b.clone()],
            summary: a.clone(),
        };
        let perm = [2, 0, 1];
        let shuffle = |p: &Predictive| match p {
            Predictive::Gaussian { mean, var } => Predictive::Gaussian {
                mean: mean.select_rows(&perm),
                var: var.select_rows(&perm),
            },
            _ => unreachable!(),
        };
        let shuffled = Prediction {
            components: vec![shuffle(&a), shuffle(&b)],
            summary: shuffle(&a),
        };
        let m1 = score(&pred, &y).unwrap();
        let m2 = score(&shuffled, &y.select_rows(&perm)).unwrap();
        assert!((m1.nll - m2.nll).abs() < 1e-14);
        assert!((m1.rmse.unwrap() - m2.rmse.unwrap()).abs() < 1e-14);
    }

    fn sample_report() -> RunReport {
        RunReport {
            schema: REPORT_SCHEMA.into(),
            command: "train".into(),
            dataset: "toy:step".into(),
            seed: 12345678901234,
            config: [("variant".to_string(), "svgp".to_string())].into_iter().collect(),
            n_train: 50,
            n_test: 200,
            trace: vec![
                TracePoint { iteration: 0, elbo: -123.456 },
                TracePoint { iteration: 10, elbo: 0.1 + 0.2 },
            ],
            metrics: Metrics {
                rmse: Some(0.123456789012345),
                nll: -0.5,
                accuracy: None,
                n_test: 200,
            },
            collapse: None,
            warnings: vec![],
            wall_time_seconds: 1.5,
        }
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        write_report(&r, dir.path()).unwrap();
        let back = RunReport::read(&dir.path().join("report.json")).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.seed, 12345678901234);
        let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(csv, "iteration,elbo\n0,-123.456\n10,0.30000000000000004\n");
    }

    #[test]
    fn wrong_schema_rejected() {
        let mut r = sample_report();
        r.schema = "other".into();
        assert!(matches!(RunReport::from_json(&r.to_json()), Err(Error::SchemaMismatch(_))));
        assert!(RunReport::from_json("{").is_err());
    }
}
