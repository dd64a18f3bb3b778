//! Loss values and exact gradients for every model objective.
//!
//! Objectives are deterministic functions of a [`ParamSet`], a data batch
//! and a [`NoiseBundle`] of pre-drawn standard normals, written against the
//! matrix [`Tape`]. [`value_and_grad`] differentiates them in reverse mode;
//! [`finite_diff_check`] compares the result against central differences.

mod tape;

pub use tape::{log_sum_exp, sigmoid_f64, softplus_f64, Gradients, Tape, Var};
pub(crate) use tape::rbf_forward as rbf_matrix;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::normal_matrix;

/// Named parameter arrays in a fixed insertion order.
///
/// The flat gradient layout is the concatenation of every array, row-major,
/// in insertion order; [`ParamSet::flatten`], [`ParamSet::set_flat`] and
/// [`value_and_grad`] all use it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Matrix)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an array. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::config(name, "duplicate parameter name"));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Looks up a parameter, failing with the missing name.
    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::ModelFormat(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim());
        for (_, m) in &self.entries {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_dim() {
            return Err(Error::dims(format!(
                "set_flat: expected {} values, got {}",
                self.total_dim(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for (_, m) in &mut self.entries {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Flat index range of each named array.
    pub fn layout(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut offset = 0;
        self.entries
            .iter()
            .map(|(n, m)| {
                let r = offset..offset + m.len();
                offset += m.len();
                (n.clone(), r)
            })
            .collect()
    }

    /// Places every array on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), tape.leaf(m.clone())))
                .collect(),
        }
    }
}

/// Tape leaves for a [`ParamSet`], in the same order.
pub struct ParamVars<'t> {
    vars: Vec<(String, Var<'t>)>,
}

impl<'t> ParamVars<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::ModelFormat(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Standard-normal draws consumed by a stochastic objective.
///
/// Each field belongs to one consumer; shapes are fixed by the consumer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseBundle {
    /// Reparameterization noise of the Gaussian encoder, n×d_z.
    pub encoder: Option<Matrix>,
    /// Per-step flow increments ε^l, one n×d_z matrix per step and
    /// trajectory (trajectory-major: all steps of trajectory 0 first).
    pub flow: Vec<Matrix>,
    /// Monte Carlo draws for non-Gaussian likelihoods, one n×d_y matrix each.
    pub likelihood: Vec<Matrix>,
}

/// Sizes needed to draw a [`NoiseBundle`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseShape {
    pub n: usize,
    pub latent_dim: usize,
    pub output_dim: usize,
    pub encoder: bool,
    pub flow_steps: usize,
    pub trajectories: usize,
    pub mc_samples: usize,
}

impl NoiseBundle {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, shape: NoiseShape) -> Self {
        let encoder = shape
            .encoder
            .then(|| normal_matrix(rng, shape.n, shape.latent_dim));
        let flow = (0..shape.flow_steps * shape.trajectories)
            .map(|_| normal_matrix(rng, shape.n, shape.latent_dim))
            .collect();
        let likelihood = (0..shape.mc_samples)
            .map(|_| normal_matrix(rng, shape.n, shape.output_dim))
            .collect();
        NoiseBundle {
            encoder,
            flow,
            likelihood,
        }
    }

    /// All-zero noise of the given shape (deterministic mean paths).
    pub fn zeros(shape: NoiseShape) -> Self {
        NoiseBundle {
            encoder: shape
                .encoder
                .then(|| Matrix::zeros(shape.n, shape.latent_dim)),
            flow: vec![Matrix::zeros(shape.n, shape.latent_dim); shape.flow_steps * shape.trajectories],
            likelihood: vec![Matrix::zeros(shape.n, shape.output_dim); shape.mc_samples],
        }
    }
}

/// A scalar objective written against the tape.
pub trait Objective {
    fn eval<'t>(&self, tape: &'t Tape, params: &ParamVars<'t>) -> Result<Var<'t>>;
}

impl<F> Objective for F
where
    F: for<'t> Fn(&'t Tape, &ParamVars<'t>) -> Result<Var<'t>>,
{
    fn eval<'t>(&self, tape: &'t Tape, params: &ParamVars<'t>) -> Result<Var<'t>> {
        self(tape, params)
    }
}

/// Pins a closure to the higher-ranked signature [`Objective`] needs, so
/// its lifetimes are inferred at the definition site.
pub fn objective_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &ParamVars<'t>) -> Result<Var<'t>>,
{
    f
}

/// Objective value only.
pub fn value<O: Objective + ?Sized>(objective: &O, theta: &ParamSet) -> Result<f64> {
    let tape = Tape::new();
    let vars = theta.bind(&tape);
    let out = objective.eval(&tape, &vars)?;
    if out.shape() != (1, 1) {
        return Err(Error::dims("objective must return a 1x1 value"));
    }
    Ok(out.item())
}

/// Objective value and its gradient in [`ParamSet`] flat order.
pub fn value_and_grad<O: Objective + ?Sized>(
    objective: &O,
    theta: &ParamSet,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars = theta.bind(&tape);
    let out = objective.eval(&tape, &vars)?;
    if out.shape() != (1, 1) {
        return Err(Error::dims("objective must return a 1x1 value"));
    }
    let v = out.item();
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let grads = tape.gradient(out);
    let mut flat = Vec::with_capacity(theta.total_dim());
    for (_, var) in vars.iter() {
        match grads.get(var) {
            Some(g) => flat.extend_from_slice(g.as_slice()),
            None => flat.extend(std::iter::repeat_n(0.0, var.value().len())),
        }
    }
    Ok((v, flat))
}

/// Maximum relative error between [`value_and_grad`] and central
/// differences `(f(θ+εeᵢ) − f(θ−εeᵢ)) / 2ε`, using the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<O: Objective + ?Sized>(objective: &O, theta: &ParamSet, eps: f64) -> Result<f64> {
    Ok(finite_diff_report(objective, theta, eps)?.max_rel_error)
}

/// Detailed result of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn finite_diff_report<O: Objective + ?Sized>(
    objective: &O,
    theta: &ParamSet,
    eps: f64,
) -> Result<FiniteDiffReport> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::config("eps", "finite-difference step must lie in [1e-6, 1e-3]"));
    }
    let (_, analytic) = value_and_grad(objective, theta)?;
    let base = theta.flatten();
    let mut probe = theta.clone();
    let mut numeric = Vec::with_capacity(base.len());
    let mut worst = (0.0f64, 0usize);
    for i in 0..base.len() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + eps;
        probe.set_flat(&shifted)?;
        let up = value(objective, &probe)?;
        shifted[i] = base[i] - eps;
        probe.set_flat(&shifted)?;
        let down = value(objective, &probe)?;
        let num = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(num.abs()).max(1e-8);
        let rel = (analytic[i] - num).abs() / denom;
        if rel > worst.0 || rel.is_nan() {
            worst = (if rel.is_nan() { f64::INFINITY } else { rel }, i);
        }
        numeric.push(num);
    }
    Ok(FiniteDiffReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric,
    })
}
