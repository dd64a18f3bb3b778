//! Adam and the training loop.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradengine::value_and_grad;
use crate::model::Model;
use crate::numerics::Matrix;
use crate::rng::{permutation, stream, SeededRng, Stream};

/// Bias-corrected Adam state over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One descent step on `theta` along gradient `g`.
pub fn adam_step(theta: &mut [f64], g: &[f64], st: &mut AdamState) -> Result<()> {
    if theta.len() != g.len() || st.m.len() != g.len() {
        return Err(Error::dims(format!(
            "adam: {} parameters, {} gradients, {} moments",
            theta.len(),
            g.len(),
            st.m.len()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - st.beta1.powi(t);
    let c2 = 1.0 - st.beta2.powi(t);
    for i in 0..g.len() {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
        let mhat = st.m[i] / c1;
        let vhat = st.v[i] / c2;
        theta[i] -= st.learning_rate * mhat / (vhat.sqrt() + st.eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Parameter-name prefixes to optimize; `None` optimizes everything.
    pub trainable: Option<Vec<String>>,
}

impl TrainSchedule {
    pub fn new(iterations: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainSchedule {
            iterations,
            batch_size,
            learning_rate,
            seed,
            eval_every: 10,
            trainable: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Minibatch ELBO (rescaled to the full dataset) before the update.
    pub elbo: f64,
}

#[derive(Clone, Debug)]
pub struct Fit {
    pub model: Model,
    pub trace: Vec<TracePoint>,
}

/// Training stopped early; `model` holds the last finite parameters.
#[derive(Debug)]
pub struct FitAbort {
    pub error: Error,
    pub iteration: usize,
    pub trace: Vec<TracePoint>,
    pub model: Model,
}

impl fmt::Display for FitAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for FitAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Epoch-wise shuffled minibatches drawn without replacement; a final
/// short batch is dropped and the data reshuffled.
struct Batcher {
    n: usize,
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl Batcher {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Batcher {
            n,
            size: size.min(n),
            order: Vec::new(),
            pos: n,
            rng: stream(seed, Stream::Minibatch),
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.pos + self.size > self.n {
            self.order = permutation(&mut self.rng, self.n);
            self.pos = 0;
        }
        let b = &self.order[self.pos..self.pos + self.size];
        self.pos += self.size;
        b
    }
}

/// Maximizes the ELBO of `model` on `(input, y)` with Adam.
///
/// `input` is the encoder input (see [`Model::encoder_input`]).
pub fn fit(mut model: Model, input: &Matrix, y: &Matrix, sched: &TrainSchedule) -> std::result::Result<Fit, FitAbort> {
    let mut trace = Vec::new();
    macro_rules! abort {
        ($err:expr, $it:expr, $model:expr) => {
            return Err(FitAbort {
                error: $err,
                iteration: $it,
                trace,
                model: $model,
            })
        };
    }
    if let Err(e) = sched.validate() {
        abort!(e, 0, model);
    }
    let n = input.rows();
    if n == 0 || y.rows() != n {
        abort!(Error::EmptyDataset, 0, model);
    }
    let mask: Vec<bool> = model
        .params
        .layout()
        .into_iter()
        .flat_map(|(name, range)| {
            let on = match &sched.trainable {
                None => true,
                Some(prefixes) => prefixes.iter().any(|p| name.starts_with(p.as_str())),
            };
            std::iter::repeat_n(on, range.len())
        })
        .collect();
    let mut adam = AdamState::new(mask.len(), sched.learning_rate);
    let mut batches = Batcher::new(n, sched.batch_size, sched.seed);
    let mut noise_rng = stream(sched.seed, Stream::Noise);
    for it in 0..sched.iterations {
        let idx = batches.next().to_vec();
        let (xb, yb) = (input.select_rows(&idx), y.select_rows(&idx));
        let noise = model.draw_noise(&mut noise_rng, idx.len());
        let step = value_and_grad(&model.objective(&xb, &yb, &noise, n), &model.params);
        let (loss, mut grad) = match step {
            Ok(v) => v,
            Err(e) => abort!(e, it, model),
        };
        if !loss.is_finite() {
            abort!(Error::NonFiniteLoss, it, model);
        }
        if it % sched.eval_every == 0 || it + 1 == sched.iterations {
            trace.push(TracePoint {
                iteration: it,
                elbo: -loss,
            });
        }
        for (g, on) in grad.iter_mut().zip(&mask) {
            if !on {
                *g = 0.0;
            }
        }
        let mut theta = model.params.flatten();
        if let Err(e) = adam_step(&mut theta, &grad, &mut adam) {
            abort!(e, it, model);
        }
        if it % sched.eval_every == 0 && theta.iter().any(|v| !v.is_finite()) {
            abort!(Error::NonFiniteLoss, it, model);
        }
        model.params.set_flat(&theta).expect("layout unchanged");
    }
    Ok(Fit { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Task, Variant};
    use crate::rng::normal_matrix;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut theta = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(3, 0.1);
        adam_step(&mut theta, &[0.0; 3], &mut st).unwrap();
        assert_eq!(theta, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut theta = vec![0.5; 4];
        let mut st = AdamState::new(4, 0.1);
        adam_step(&mut theta, &[1.0; 4], &mut st).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −0.1/(1 + 1e-8)
        let want = 0.5 - 0.1 / (1.0 + 1e-8);
        for t in theta {
            assert!((t - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_is_bit_reproducible() {
        let run = || {
            let mut theta = vec![0.3, -0.7];
            let mut st = AdamState::new(2, 0.01);
            for k in 0..5 {
                let g = [theta[0] * 2.0 + k as f64, theta[1].sin()];
                adam_step(&mut theta, &g, &mut st).unwrap();
            }
            theta
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut st = AdamState::new(2, 0.1);
        let mut theta = vec![0.0; 2];
        assert!(matches!(
            adam_step(&mut theta, &[f64::NAN, 0.0], &mut st),
            Err(Error::NonFiniteGradient)
        ));
        assert!(adam_step(&mut theta, &[0.0], &mut st).is_err());
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut b = Batcher::new(10, 3, 4);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next().to_vec()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        let mut full = Batcher::new(5, 64, 0);
        assert_eq!(full.next().len(), 5);
    }

    fn sin_data(n: usize) -> (Matrix, Matrix) {
        let x = Matrix::column(&(0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect::<Vec<_>>());
        let y = x.map(f64::sin);
        (x, y)
    }

    #[test]
    fn svgp_fits_sine() {
        let (x, y) = sin_data(20);
        let mut c = ModelConfig::new(Variant::Svgp, Task::Regression, 1, 1);
        c.m = 8;
        c.lengthscale = 1.0;
        let model = Model::init(c, &x).unwrap();
        let sched = TrainSchedule::new(2000, 20, 0.03, 0);
        let fit = fit(model, &x, &y, &sched).unwrap();
        let p = fit.model.predict(&x, 1, &mut stream(0, Stream::Predict)).unwrap();
        let rmse = (p.mean().zip_map(&y, |a, b| (a - b) * (a - b)).sum() / 20.0).sqrt();
        assert!(rmse < 0.2, "rmse {rmse}");
        let first = fit.trace.first().unwrap().elbo;
        let last = fit.trace.last().unwrap().elbo;
        assert!(last > first);
    }

    #[test]
    fn same_seed_same_trace() {
        let mut rng = stream(1, Stream::Data);
        let x = normal_matrix(&mut rng, 30, 2);
        let y = x.select_cols(0, 1).map(|v| v.cos());
        let mut c = ModelConfig::new(Variant::DlvklNsde, Task::Regression, 2, 1);
        c.m = 8;
        c.flow_steps = 3;
        let model = Model::init(c, &x).unwrap();
        let sched = TrainSchedule::new(40, 16, 5e-3, 9);
        let a = fit(model.clone(), &x, &y, &sched).unwrap();
        let b = fit(model, &x, &y, &sched).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (x, y) = sin_data(12);
        let mut c = ModelConfig::new(Variant::Svgp, Task::Regression, 1, 1);
        c.m = 6;
        let model = Model::init(c, &x).unwrap();
        let mut sched = TrainSchedule::new(20, 12, 0.05, 0);
        sched.trainable = Some(vec!["svgp.q_".into()]);
        let out = fit(model.clone(), &x, &y, &sched).unwrap();
        for (name, m) in model.params.iter() {
            let moved = out.model.params.get(name).unwrap() != m;
            assert_eq!(moved, name.starts_with("svgp.q_"), "{name}");
        }
    }

    #[test]
    fn invalid_schedule_and_empty_data_abort() {
        let (x, y) = sin_data(5);
        let model = Model::init(ModelConfig::new(Variant::Svgp, Task::Regression, 1, 1), &x).unwrap();
        let bad = TrainSchedule::new(0, 5, 0.1, 0);
        assert!(fit(model.clone(), &x, &y, &bad).is_err());
        let empty = Matrix::zeros(0, 1);
        let err = fit(model, &empty, &empty, &TrainSchedule::new(5, 5, 0.1, 0)).unwrap_err();
        assert!(matches!(err.error, Error::EmptyDataset));
    }

    #[test]
    fn huge_learning_rate_aborts_with_partial_trace() {
        let (x, y) = sin_data(10);
        let mut c = ModelConfig::new(Variant::Dkl, Task::Regression, 1, 1);
        c.m = 5;
        let model = Model::init(c, &x).unwrap();
        let mut sched = TrainSchedule::new(200, 10, 1e6, 0);
        sched.eval_every = 1;
        match fit(model, &x, &y, &sched) {
            Err(abort) => {
                assert_eq!(abort.trace.len(), abort.iteration);
                assert!(abort.model.params.flatten().iter().all(|v| v.is_finite()));
            }
            Ok(f) => assert!(f.trace.iter().all(|t| t.elbo.is_finite())),
        }
    }
}
