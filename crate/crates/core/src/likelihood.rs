//! Observation models: expected log-likelihood under `q(f)` and predictive
//! summaries.
//!
//! The Gaussian case is closed form. Bernoulli (logistic link) and
//! Categorical (softmax link) use reparameterized Monte Carlo draws
//! `f = μ + √ν·ε` with externally supplied `ε`. A noise matrix with a single
//! row is shared by every data point.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gradengine::{sigmoid_f64, Tape, Var};
use crate::numerics::Matrix;

pub const LOG_NOISE_VARIANCE: &str = "lik.log_noise_variance";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LikelihoodKind {
    Gaussian,
    Bernoulli,
    Categorical { classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Likelihood {
    pub kind: LikelihoodKind,
    /// One per output; empty for classification.
    pub log_noise_variances: Vec<f64>,
    /// Monte Carlo draws for non-Gaussian expectations.
    pub mc_samples: usize,
}

impl Likelihood {
    pub fn gaussian(noise_variances: &[f64]) -> Self {
        Likelihood {
            kind: LikelihoodKind::Gaussian,
            log_noise_variances: noise_variances.iter().map(|v| v.ln()).collect(),
            mc_samples: 1,
        }
    }

    pub fn bernoulli(mc_samples: usize) -> Self {
        Likelihood {
            kind: LikelihoodKind::Bernoulli,
            log_noise_variances: Vec::new(),
            mc_samples,
        }
    }

    pub fn categorical(classes: usize, mc_samples: usize) -> Self {
        Likelihood {
            kind: LikelihoodKind::Categorical { classes },
            log_noise_variances: Vec::new(),
            mc_samples,
        }
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        self.log_noise_variances.iter().map(|v| v.exp()).collect()
    }
}

impl LikelihoodKind {
    pub fn is_classification(&self) -> bool {
        !matches!(self, LikelihoodKind::Gaussian)
    }

    /// Number of GP outputs needed for `label_cols` observed columns.
    pub fn latent_dim(&self, label_cols: usize) -> usize {
        match self {
            LikelihoodKind::Gaussian => label_cols,
            LikelihoodKind::Bernoulli => 1,
            LikelihoodKind::Categorical { classes } => *classes,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match self {
            LikelihoodKind::Gaussian => None,
            LikelihoodKind::Bernoulli => Some(2),
            LikelihoodKind::Categorical { classes } => Some(*classes),
        }
    }
}

/// Rejects labels that are not integers in `[0, classes)`.
pub fn check_labels(kind: LikelihoodKind, y: &Matrix) -> Result<()> {
    let Some(classes) = kind.classes() else {
        return Ok(());
    };
    if y.cols() != 1 {
        return Err(Error::dims(format!(
            "classification expects one label column, got {}",
            y.cols()
        )));
    }
    for &label in y.as_slice() {
        if !(label >= 0.0 && label < classes as f64 && label.fract() == 0.0) {
            return Err(Error::InvalidLabel { label, classes });
        }
    }
    Ok(())
}

fn one_hot(y: &Matrix, classes: usize) -> Matrix {
    let mut m = Matrix::zeros(y.rows(), classes);
    for i in 0..y.rows() {
        m[(i, y.as_slice()[i] as usize)] = 1.0;
    }
    m
}

/// Reparameterized draw `μ + √ν·ε`; a one-row `ε` is broadcast over rows.
pub fn reparam<'t>(mu: Var<'t>, nu: Var<'t>, eps: &Matrix) -> Result<Var<'t>> {
    let tape = mu.tape();
    let sd = nu.sqrt();
    let e = tape.constant(eps.clone());
    let scaled = if eps.rows() == 1 && mu.rows() != 1 {
        sd.mul_row(e)?
    } else {
        sd.mul(e)?
    };
    mu.add(scaled)
}

/// `Σᵢ E_{q(fᵢ)}[log p(yᵢ|fᵢ)]` on the tape.
///
/// `mu`, `nu` are n×d_y; `log_noise` (1×d_y) is required for the Gaussian
/// case; `noise` holds the Monte Carlo draws for classification.
pub fn expected_log_lik_var<'t>(
    kind: LikelihoodKind,
    y: &Matrix,
    mu: Var<'t>,
    nu: Var<'t>,
    log_noise: Option<Var<'t>>,
    noise: &[Matrix],
) -> Result<Var<'t>> {
    let tape = mu.tape();
    let n = mu.rows();
    if y.rows() != n || nu.shape() != mu.shape() {
        return Err(Error::dims(format!(
            "expected_log_lik: {} targets for {}x{} moments",
            y.rows(),
            n,
            mu.cols()
        )));
    }
    match kind {
        LikelihoodKind::Gaussian => {
            let log_noise = log_noise
                .ok_or_else(|| Error::config("likelihood", "Gaussian noise variance missing"))?;
            if y.cols() != mu.cols() || log_noise.cols() != mu.cols() {
                return Err(Error::dims("Gaussian likelihood: output dimensions differ"));
            }
            let resid = tape.constant(y.clone()).sub(mu)?.square().add(nu)?;
            let quad = resid.mul_row(log_noise.neg().exp())?.sum();
            let norm = log_noise
                .sum()
                .scale(n as f64)
                .add_scalar_var(tape.scalar(n as f64 * mu.cols() as f64 * (2.0 * PI).ln()))?;
            Ok(quad.add(norm)?.scale(-0.5))
        }
        LikelihoodKind::Bernoulli | LikelihoodKind::Categorical { .. } => {
            check_labels(kind, y)?;
            if noise.is_empty() {
                return Err(Error::config("mc_samples", "at least one Monte Carlo draw needed"));
            }
            let mut total: Option<Var<'t>> = None;
            for eps in noise {
                let f = reparam(mu, nu, eps)?;
                let term = match kind {
                    LikelihoodKind::Bernoulli => {
                        let sign = y.map(|v| 1.0 - 2.0 * v);
                        f.mul(tape.constant(sign))?.softplus().sum().neg()
                    }
                    LikelihoodKind::Categorical { classes } => {
                        let mask = tape.constant(one_hot(y, classes));
                        f.mul(mask)?.sum().sub(f.logsumexp_rows().sum())?
                    }
                    LikelihoodKind::Gaussian => unreachable!(),
                };
                total = Some(match total {
                    Some(t) => t.add(term)?,
                    None => term,
                });
            }
            Ok(total.expect("nonempty").scale(1.0 / noise.len() as f64))
        }
    }
}

/// Plain-value version of [`expected_log_lik_var`].
pub fn expected_log_lik(
    lik: &Likelihood,
    y: &Matrix,
    mu: &Matrix,
    nu: &Matrix,
    noise: &[Matrix],
) -> Result<f64> {
    if nu.as_slice().iter().any(|v| *v < 0.0) {
        return Err(Error::config("nu", "predictive variances must be non-negative"));
    }
    let tape = Tape::new();
    let log_noise = (lik.kind == LikelihoodKind::Gaussian)
        .then(|| tape.constant(Matrix::row_vector(&lik.log_noise_variances)));
    let v = expected_log_lik_var(
        lik.kind,
        y,
        tape.constant(mu.clone()),
        tape.constant(nu.clone()),
        log_noise,
        noise,
    )?;
    Ok(v.item())
}

/// Predictive distribution of the observations at test points.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictive {
    /// Per-point, per-output mean and variance.
    Gaussian { mean: Matrix, var: Matrix },
    /// n×k class probabilities (k=2 for Bernoulli: columns P(0), P(1)).
    Classes { probs: Matrix },
}

/// Predictive summary from latent moments. Classification averages the
/// link over the draws in `noise`.
pub fn predictive(lik: &Likelihood, mu: &Matrix, nu: &Matrix, noise: &[Matrix]) -> Result<Predictive> {
    match lik.kind {
        LikelihoodKind::Gaussian => {
            let nv = lik.noise_variances();
            if nv.len() != mu.cols() {
                return Err(Error::dims("Gaussian likelihood: output dimensions differ"));
            }
            let mut var = nu.clone();
            for i in 0..var.rows() {
                for (v, s) in var.row_mut(i).iter_mut().zip(&nv) {
                    *v += s;
                }
            }
            Ok(Predictive::Gaussian {
                mean: mu.clone(),
                var,
            })
        }
        LikelihoodKind::Bernoulli | LikelihoodKind::Categorical { .. } => {
            if noise.is_empty() {
                return Err(Error::config("mc_samples", "at least one Monte Carlo draw needed"));
            }
            let n = mu.rows();
            let k = lik.kind.classes().expect("classification");
            let mut probs = Matrix::zeros(n, k);
            let w = 1.0 / noise.len() as f64;
            for eps in noise {
                let shared = eps.rows() == 1;
                for i in 0..n {
                    let e = if shared { eps.row(0) } else { eps.row(i) };
                    let f: Vec<f64> = mu
                        .row(i)
                        .iter()
                        .zip(nu.row(i))
                        .zip(e)
                        .map(|((m, v), e)| m + v.max(0.0).sqrt() * e)
                        .collect();
                    let row = probs.row_mut(i);
                    if lik.kind == LikelihoodKind::Bernoulli {
                        let p1 = sigmoid_f64(f[0]);
                        row[0] += w * (1.0 - p1);
                        row[1] += w * p1;
                    } else {
                        let lse = crate::gradengine::log_sum_exp(&f);
                        for (r, fv) in row.iter_mut().zip(&f) {
                            *r += w * (fv - lse).exp();
                        }
                    }
                }
            }
            Ok(Predictive::Classes { probs })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradengine::{objective_fn, value_and_grad, ParamSet, ParamVars};
    use crate::rng::{normal_matrix, stream, Stream};
    use proptest::prelude::*;

    fn m(v: f64) -> Matrix {
        Matrix::scalar(v)
    }

    #[test]
    fn gaussian_point_mass_is_log_density() {
        let lik = Likelihood::gaussian(&[0.3]);
        let v = expected_log_lik(&lik, &m(1.2), &m(0.7), &m(0.0), &[]).unwrap();
        let want = -0.5 * (2.0 * PI * 0.3).ln() - 0.25 / (2.0 * 0.3);
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn gaussian_closed_form() {
        let lik = Likelihood::gaussian(&[1.0]);
        let v = expected_log_lik(&lik, &m(0.0), &m(0.0), &m(1.0), &[]).unwrap();
        assert!((v - (-0.5 * (2.0 * PI).ln() - 0.5)).abs() < 1e-14);
        assert!((v + 1.41894).abs() < 1e-5);
    }

    #[test]
    fn bernoulli_at_zero_is_log_half() {
        let lik = Likelihood::bernoulli(3);
        let noise = vec![normal_matrix(&mut stream(0, Stream::Noise), 1, 1); 3];
        let v = expected_log_lik(&lik, &m(1.0), &m(0.0), &m(0.0), &noise).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn invalid_labels_are_rejected() {
        let lik = Likelihood::categorical(3, 1);
        let noise = vec![Matrix::zeros(1, 3)];
        for bad in [3.0, -1.0, 0.5] {
            let r = expected_log_lik(&lik, &m(bad), &Matrix::zeros(1, 3), &Matrix::zeros(1, 3), &noise);
            assert!(matches!(r, Err(Error::InvalidLabel { .. })), "{bad}");
        }
        let b = Likelihood::bernoulli(1);
        assert!(expected_log_lik(&b, &m(2.0), &m(0.0), &m(0.0), &[Matrix::zeros(1, 1)]).is_err());
    }

    #[test]
    fn predictive_examples() {
        let lik = Likelihood::gaussian(&[0.5]);
        match predictive(&lik, &m(0.0), &m(0.5), &[]).unwrap() {
            Predictive::Gaussian { mean, var } => {
                assert_eq!(mean.item(), 0.0);
                assert_eq!(var.item(), 1.0);
            }
            _ => panic!(),
        }
        let b = Likelihood::bernoulli(1);
        match predictive(&b, &m(0.0), &m(0.0), &[Matrix::zeros(1, 1)]).unwrap() {
            Predictive::Classes { probs } => assert_eq!(probs.row(0), &[0.5, 0.5]),
            _ => panic!(),
        }
    }

    #[test]
    fn categorical_saturates_like_monte_carlo() {
        let lik = Likelihood::categorical(3, 64);
        let mu = Matrix::row_vector(&[10.0, 0.0, 0.0]);
        let nu = Matrix::row_vector(&[1e-9; 3]);
        let mut rng = stream(1, Stream::Noise);
        let noise: Vec<Matrix> = (0..64).map(|_| normal_matrix(&mut rng, 1, 3)).collect();
        let Predictive::Classes { probs } = predictive(&lik, &mu, &nu, &noise).unwrap() else {
            panic!()
        };
        // independent oracle: softmax of each draw, averaged
        let mut oracle = [0.0; 3];
        for e in &noise {
            let f: Vec<f64> = (0..3).map(|j| mu.as_slice()[j] + 1e-9f64.sqrt() * e.as_slice()[j]).collect();
            let z: f64 = f.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                oracle[j] += f[j].exp() / z / 64.0;
            }
        }
        for j in 0..3 {
            assert!((probs.row(0)[j] - oracle[j]).abs() < 1e-12);
        }
        assert!(probs.row(0)[0] > 0.9999);
    }

    #[test]
    fn gaussian_matches_monte_carlo() {
        let mut rng = stream(3, Stream::Noise);
        let n = 100_000;
        for case in 0..4 {
            let y = 0.3 * case as f64 - 0.4;
            let (mu, nu, s2) = (0.2 * case as f64, 0.1 + 0.3 * case as f64, 0.2 + 0.1 * case as f64);
            let lik = Likelihood::gaussian(&[s2]);
            let exact = expected_log_lik(&lik, &m(y), &m(mu), &m(nu), &[]).unwrap();
            let eps = normal_matrix(&mut rng, n, 1);
            let vals: Vec<f64> = eps
                .as_slice()
                .iter()
                .map(|e| {
                    let f = mu + nu.sqrt() * e;
                    -0.5 * (2.0 * PI * s2).ln() - (y - f).powi(2) / (2.0 * s2)
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - exact).abs() <= 3.0 * se, "case {case}: {mean} vs {exact} (se {se})");
        }
    }

    #[test]
    fn gaussian_mean_gradient_points_to_target() {
        let y = Matrix::column(&[0.4]);
        for k in -10..=10 {
            let mu0 = 0.4 + 0.1 * k as f64;
            if k == 0 {
                continue;
            }
            let mut p = ParamSet::new();
            p.insert("mu", Matrix::column(&[mu0])).unwrap();
            let y = y.clone();
            let f = objective_fn(move |t: &Tape, v: &ParamVars<'_>| {
                let nu = t.constant(Matrix::column(&[0.2]));
                let ln = t.constant(Matrix::row_vector(&[0.1f64.ln()]));
                expected_log_lik_var(LikelihoodKind::Gaussian, &y, v.get("mu")?, nu, Some(ln), &[])
            });
            let (_, g) = value_and_grad(&f, &p).unwrap();
            assert_eq!(g[0].signum(), -(k as f64).signum());
        }
    }

    proptest! {
        #[test]
        fn class_probabilities_are_normalized(seed in 0u64..300, k in 2usize..5, n in 1usize..6) {
            let mut rng = stream(seed, Stream::Predict);
            let mu = normal_matrix(&mut rng, n, k).scale(3.0);
            let nu = normal_matrix(&mut rng, n, k).map(|v| v * v);
            let noise: Vec<Matrix> = (0..8).map(|_| normal_matrix(&mut rng, n, k)).collect();
            let Predictive::Classes { probs } = predictive(&Likelihood::categorical(k, 8), &mu, &nu, &noise).unwrap() else {
                panic!()
            };
            for i in 0..n {
                let s: f64 = probs.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(probs.row(i).iter().all(|p| (0.0..=1.0).contains(p)));
            }
            let b = predictive(&Likelihood::bernoulli(8), &mu.select_cols(0, 1), &nu.select_cols(0, 1),
                &noise.iter().map(|e| e.select_cols(0, 1)).collect::<Vec<_>>()).unwrap();
            let Predictive::Classes { probs } = b else { panic!() };
            for i in 0..n {
                prop_assert!((probs.row(i)[0] + probs.row(i)[1] - 1.0).abs() < 1e-12);
            }
        }
    }
}
