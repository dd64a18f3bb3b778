//! Neural SDE posterior flow.
//!
//! `dz = μ(z, t) dt + diag(ν(z, t))^{1/2} dW` on `[0, T]`, integrated with
//! `L` Euler–Maruyama steps of size `Δt = T/L`:
//!
//! ```text
//! z^{l+1} = z^l + μ^l Δt + √(ν^l Δt) ∘ ε^l
//! ```
//!
//! Drift and diffusion share one ReLU trunk fed with `[z, t]`; the drift
//! head is linear and the diffusion head is `ν₀·sigmoid(·)`. The marginal
//! `q(z^L|x)` is estimated by the mixture of the final Gaussian transitions
//! of `s` trajectories.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradengine::{log_sum_exp, ParamSet, ParamVars, Tape, Var};
use crate::latent::{trunk_forward, Dense, DenseVars, LOG_NU0};
use crate::numerics::Matrix;

pub const FLOW: &str = "flow";

/// Drift/diffusion network weights plus integration settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams {
    /// Hidden layers; the first takes `d_z + 1` inputs (state and time).
    pub trunk: Vec<Dense>,
    pub drift: Dense,
    pub diffusion: Dense,
    /// `ln ν₀`, shared with the SDE prior.
    pub log_nu0: f64,
    pub time: f64,
    pub steps: usize,
}

impl FlowParams {
    /// He-scaled trunk; zero drift and diffusion heads, so the initial flow
    /// has no drift and diffusion `ν₀/2`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        d_z: usize,
        width: usize,
        layers: usize,
        nu0: f64,
        time: f64,
        steps: usize,
    ) -> Result<Self> {
        check_schedule(time, steps)?;
        let mut trunk = Vec::with_capacity(layers);
        let mut input = d_z + 1;
        for _ in 0..layers {
            trunk.push(Dense::random(rng, input, width, 2f64.sqrt()));
            input = width;
        }
        Ok(FlowParams {
            trunk,
            drift: Dense::zeros(input, d_z),
            diffusion: Dense::zeros(input, d_z),
            log_nu0: nu0.ln(),
            time,
            steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.time / self.steps as f64
    }

    pub fn nu0(&self) -> f64 {
        self.log_nu0.exp()
    }

    /// Adds the network arrays under `flow.*` and `ν₀` under its prior name.
    pub fn insert_into(&self, params: &mut ParamSet) -> Result<()> {
        for (i, l) in self.trunk.iter().enumerate() {
            insert_dense(params, &format!("{FLOW}.h{i}"), l)?;
        }
        insert_dense(params, &format!("{FLOW}.drift"), &self.drift)?;
        insert_dense(params, &format!("{FLOW}.diffusion"), &self.diffusion)?;
        params.insert(LOG_NU0, Matrix::scalar(self.log_nu0))
    }

    pub fn from_params(params: &ParamSet, layers: usize, time: f64, steps: usize) -> Result<Self> {
        check_schedule(time, steps)?;
        Ok(FlowParams {
            trunk: (0..layers)
                .map(|i| dense_from(params, &format!("{FLOW}.h{i}")))
                .collect::<Result<_>>()?,
            drift: dense_from(params, &format!("{FLOW}.drift"))?,
            diffusion: dense_from(params, &format!("{FLOW}.diffusion"))?,
            log_nu0: params.require(LOG_NU0)?.item(),
            time,
            steps,
        })
    }
}

fn check_schedule(time: f64, steps: usize) -> Result<()> {
    if !(time > 0.0) || steps == 0 {
        return Err(Error::config("flow", "flow time must be positive and steps at least 1"));
    }
    Ok(())
}

fn insert_dense(params: &mut ParamSet, prefix: &str, d: &Dense) -> Result<()> {
    params.insert(format!("{prefix}.w"), d.w.clone())?;
    params.insert(format!("{prefix}.b"), d.b.clone())
}

fn dense_from(params: &ParamSet, prefix: &str) -> Result<Dense> {
    Ok(Dense {
        w: params.require(&format!("{prefix}.w"))?.clone(),
        b: params.require(&format!("{prefix}.b"))?.clone(),
    })
}

/// Tape handles for a flow.
#[derive(Clone, Debug)]
pub struct FlowVars<'t> {
    pub trunk: Vec<DenseVars<'t>>,
    pub drift: DenseVars<'t>,
    pub diffusion: DenseVars<'t>,
    pub log_nu0: Var<'t>,
    pub time: f64,
    pub steps: usize,
}

/// Per-step record of a trajectory batch on the tape.
pub struct TrajectoryVars<'t> {
    /// `z^0 .. z^L`.
    pub states: Vec<Var<'t>>,
    /// Transition means `z^l + μ^l Δt`.
    pub step_means: Vec<Var<'t>>,
    /// Transition variances `ν^l Δt`; empty for a noise-free flow.
    pub step_vars: Vec<Var<'t>>,
}

impl<'t> FlowVars<'t> {
    pub fn bind(vars: &ParamVars<'t>, layers: usize, time: f64, steps: usize) -> Result<Self> {
        check_schedule(time, steps)?;
        Ok(FlowVars {
            trunk: (0..layers)
                .map(|i| DenseVars::bind(vars, &format!("{FLOW}.h{i}")))
                .collect::<Result<_>>()?,
            drift: DenseVars::bind(vars, &format!("{FLOW}.drift"))?,
            diffusion: DenseVars::bind(vars, &format!("{FLOW}.diffusion"))?,
            log_nu0: vars.get(LOG_NU0)?,
            time,
            steps,
        })
    }

    pub fn constants(tape: &'t Tape, fp: &FlowParams) -> Self {
        FlowVars {
            trunk: fp.trunk.iter().map(|d| DenseVars::constants(tape, d)).collect(),
            drift: DenseVars::constants(tape, &fp.drift),
            diffusion: DenseVars::constants(tape, &fp.diffusion),
            log_nu0: tape.scalar(fp.log_nu0),
            time: fp.time,
            steps: fp.steps,
        }
    }

    pub fn dt(&self) -> f64 {
        self.time / self.steps as f64
    }

    fn hidden(&self, z: Var<'t>, t: f64) -> Result<Var<'t>> {
        let time = z.tape().constant(Matrix::filled(z.rows(), 1, t));
        trunk_forward(&self.trunk, Var::concat_cols(&[z, time])?)
    }

    pub fn drift_diffusion(&self, z: Var<'t>, t: f64) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.hidden(z, t)?;
        let mu = self.drift.apply(h)?;
        let nu = self.diffusion.apply(h)?.sigmoid().scale_by(self.log_nu0.exp())?;
        Ok((mu, nu))
    }

    /// Integrates from `z0`. `noise` holds one matrix per step (n×d_z, or a
    /// single row shared by all rows); `None` drops the diffusion term and
    /// gives the deterministic drift-only path.
    pub fn sample(&self, z0: Var<'t>, noise: Option<&[Matrix]>) -> Result<TrajectoryVars<'t>> {
        if let Some(eps) = noise {
            if eps.len() != self.steps {
                return Err(Error::dims(format!(
                    "flow needs {} noise matrices, got {}",
                    self.steps,
                    eps.len()
                )));
            }
        }
        let dt = self.dt();
        let mut states = Vec::with_capacity(self.steps + 1);
        let mut step_means = Vec::with_capacity(self.steps);
        let mut step_vars = Vec::with_capacity(self.steps);
        states.push(z0);
        let mut z = z0;
        for l in 0..self.steps {
            let t = l as f64 * dt;
            let mean = match noise {
                Some(eps) => {
                    let (mu, nu) = self.drift_diffusion(z, t)?;
                    let var = nu.scale(dt);
                    let mean = z.add(mu.scale(dt))?;
                    step_vars.push(var);
                    z = crate::likelihood::reparam(mean, var, &eps[l])?;
                    mean
                }
                None => {
                    let mu = self.drift.apply(self.hidden(z, t)?)?;
                    z = z.add(mu.scale(dt))?;
                    z
                }
            };
            step_means.push(mean);
            states.push(z);
        }
        Ok(TrajectoryVars {
            states,
            step_means,
            step_vars,
        })
    }
}

impl<'t> TrajectoryVars<'t> {
    pub fn last(&self) -> Var<'t> {
        *self.states.last().expect("at least z^0")
    }
}

/// `Σ log N(x | mean, var)` over every entry.
pub fn gaussian_logpdf_var<'t>(x: Var<'t>, mean: Var<'t>, var: Var<'t>) -> Result<Var<'t>> {
    let count = (x.rows() * x.cols()) as f64;
    let quad = x.sub(mean)?.square().div(var)?.sum();
    let logdet = var.ln().sum();
    let c = x.tape().scalar(count * (2.0 * PI).ln());
    Ok(quad.add(logdet)?.add(c)?.scale(-0.5))
}

/// Single-trajectory KL estimate summed over the batch,
/// `Σᵢ [log q̂(z^Lᵢ|xᵢ) − log p_sde(z^Lᵢ|xᵢ)]`, where `q̂` is the final
/// transition density of the same trajectory (gradients flow through both
/// the sample and the component).
pub fn kl_z_single_var<'t>(traj: &TrajectoryVars<'t>, flow: &FlowVars<'t>, prior_mean: Var<'t>) -> Result<Var<'t>> {
    let zl = traj.last();
    let (mean, var) = match (traj.step_means.last(), traj.step_vars.last()) {
        (Some(m), Some(v)) => (*m, *v),
        _ => return Err(Error::config("flow", "KL estimate needs a stochastic trajectory")),
    };
    let log_q = gaussian_logpdf_var(zl, mean, var)?;
    let tape = zl.tape();
    let prior_var = tape
        .constant(Matrix::filled(zl.rows(), zl.cols(), flow.time))
        .scale_by(flow.log_nu0.exp())?;
    let log_p = gaussian_logpdf_var(zl, prior_mean, prior_var)?;
    log_q.sub(log_p)
}

/// Plain record of a trajectory batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrajectory {
    pub states: Vec<Matrix>,
    pub step_means: Vec<Matrix>,
    pub step_vars: Vec<Matrix>,
    pub noise: Vec<Matrix>,
}

impl FlowTrajectory {
    pub fn last(&self) -> &Matrix {
        self.states.last().expect("at least z^0")
    }
}

/// Drift and diffusion at states `z` and time `t`.
pub fn drift_diffusion(fp: &FlowParams, z: &Matrix, t: f64) -> Result<(Matrix, Matrix)> {
    let tape = Tape::new();
    let fv = FlowVars::constants(&tape, fp);
    let (mu, nu) = fv.drift_diffusion(tape.constant(z.clone()), t)?;
    Ok((mu.to_matrix(), nu.to_matrix()))
}

/// One Euler–Maruyama update.
pub fn euler_step(z: &Matrix, mu: &Matrix, nu: &Matrix, dt: f64, eps: &Matrix) -> Result<Matrix> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "step size must be positive"));
    }
    if mu.shape() != z.shape() || nu.shape() != z.shape() || eps.shape() != z.shape() {
        return Err(Error::dims("euler_step: operand shapes differ"));
    }
    let mut out = z.clone();
    for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
        *o += mu.as_slice()[k] * dt + (nu.as_slice()[k] * dt).sqrt() * eps.as_slice()[k];
    }
    Ok(out)
}

/// Samples a trajectory batch from `z0` with the given per-step noise.
pub fn sample_flow(fp: &FlowParams, z0: &Matrix, noise: &[Matrix]) -> Result<FlowTrajectory> {
    let tape = Tape::new();
    let fv = FlowVars::constants(&tape, fp);
    let tr = fv.sample(tape.constant(z0.clone()), Some(noise))?;
    Ok(FlowTrajectory {
        states: tr.states.iter().map(|v| v.to_matrix()).collect(),
        step_means: tr.step_means.iter().map(|v| v.to_matrix()).collect(),
        step_vars: tr.step_vars.iter().map(|v| v.to_matrix()).collect(),
        noise: noise.to_vec(),
    })
}

/// `log N(z^L | prior_mean, ν₀T·I)`.
pub fn sde_prior_logpdf(nu0: f64, time: f64, z_l: &[f64], prior_mean: &[f64]) -> f64 {
    let v = nu0 * time;
    z_l.iter()
        .zip(prior_mean)
        .map(|(z, m)| -0.5 * ((2.0 * PI * v).ln() + (z - m) * (z - m) / v))
        .sum()
}

fn diag_gaussian_logpdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v))
        .sum()
}

/// Mixture estimate of `log q(z^L|x)` at `query`. Every row of `traj` is
/// one trajectory started from the same input; its final transition is one
/// mixture component.
pub fn posterior_logpdf_estimate(traj: &FlowTrajectory, query: &[f64]) -> Result<f64> {
    let (means, vars) = match (traj.step_means.last(), traj.step_vars.last()) {
        (Some(m), Some(v)) => (m, v),
        _ => return Err(Error::config("flow", "density estimate needs a stochastic trajectory")),
    };
    if query.len() != means.cols() {
        return Err(Error::dims("query dimension differs from the flow"));
    }
    let s = means.rows();
    let logs: Vec<f64> = (0..s)
        .map(|j| diag_gaussian_logpdf(query, means.row(j), vars.row(j)))
        .collect();
    Ok(log_sum_exp(&logs) - (s as f64).ln())
}

/// `weight · (1/s) Σⱼ [log q̂(z^{L(j)}) − log p_sde(z^{L(j)})]` for one input
/// whose `s` trajectories are the rows of `traj`.
pub fn kl_z_estimate(traj: &FlowTrajectory, weight: f64, nu0: f64, time: f64, prior_mean: &[f64]) -> Result<f64> {
    if weight == 0.0 {
        return Ok(0.0);
    }
    let z = traj.last();
    let s = z.rows();
    let mut total = 0.0;
    for j in 0..s {
        let q = posterior_logpdf_estimate(traj, z.row(j))?;
        total += q - sde_prior_logpdf(nu0, time, z.row(j), prior_mean);
    }
    Ok(weight * total / s as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradengine::{finite_diff_check, objective_fn};
    use crate::rng::{normal_matrix, stream, Stream};

    fn zero_flow(d: usize, nu0: f64, time: f64, steps: usize) -> FlowParams {
        let mut fp = FlowParams::random(&mut stream(0, Stream::Init), d, 4, 1, nu0, time, steps).unwrap();
        for l in &mut fp.trunk {
            l.w = Matrix::zeros(l.w.rows(), l.w.cols());
        }
        fp
    }

    #[test]
    fn zero_weights_give_half_diffusion() {
        let fp = zero_flow(2, 0.4, 1.0, 3);
        let z = normal_matrix(&mut stream(1, Stream::Init), 3, 2);
        let (mu, nu) = drift_diffusion(&fp, &z, 0.5).unwrap();
        assert!(mu.as_slice().iter().all(|v| *v == 0.0));
        assert!(nu.as_slice().iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn diffusion_stays_below_nu0() {
        let mut rng = stream(2, Stream::Init);
        let mut fp = FlowParams::random(&mut rng, 2, 10, 3, 0.3, 1.0, 4).unwrap();
        fp.diffusion = Dense::random(&mut rng, 10, 2, 1.0);
        let z = normal_matrix(&mut rng, 50, 2).scale(4.0);
        let (_, nu) = drift_diffusion(&fp, &z, 0.3).unwrap();
        assert!(nu.as_slice().iter().all(|v| *v > 0.0 && *v < 0.3));
    }

    #[test]
    fn euler_step_examples() {
        let z = Matrix::scalar(1.5);
        let zero = Matrix::scalar(0.0);
        assert_eq!(euler_step(&z, &zero, &zero, 0.1, &Matrix::scalar(3.0)).unwrap(), z);
        let v = euler_step(&zero, &Matrix::scalar(1.0), &zero, 0.1, &Matrix::scalar(-2.0)).unwrap();
        assert_eq!(v.item(), 0.1);
        let v = euler_step(&zero, &zero, &Matrix::scalar(1.0), 0.25, &Matrix::scalar(2.0)).unwrap();
        assert_eq!(v.item(), 1.0);
    }

    #[test]
    fn flow_matches_manual_euler_steps() {
        let mut rng = stream(3, Stream::Init);
        let mut fp = FlowParams::random(&mut rng, 2, 6, 2, 0.2, 1.0, 3).unwrap();
        fp.drift = Dense::random(&mut rng, 6, 2, 1.0);
        let z0 = normal_matrix(&mut rng, 4, 2);
        let noise: Vec<Matrix> = (0..3).map(|_| normal_matrix(&mut rng, 4, 2)).collect();
        let tr = sample_flow(&fp, &z0, &noise).unwrap();
        let mut z = z0.clone();
        for (l, eps) in noise.iter().enumerate() {
            let (mu, nu) = drift_diffusion(&fp, &z, l as f64 * fp.dt()).unwrap();
            z = euler_step(&z, &mu, &nu, fp.dt(), eps).unwrap();
            for (a, b) in z.as_slice().iter().zip(tr.states[l + 1].as_slice()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert_eq!(tr.states[0], z0);
        assert_eq!(tr, sample_flow(&fp, &z0, &noise).unwrap());
    }

    #[test]
    fn single_step_is_one_gaussian_transition() {
        let mut rng = stream(4, Stream::Init);
        let fp = FlowParams::random(&mut rng, 1, 4, 1, 0.5, 1.0, 1).unwrap();
        let z0 = Matrix::scalar(0.3);
        let tr = sample_flow(&fp, &z0, &[Matrix::scalar(0.7)]).unwrap();
        let q = posterior_logpdf_estimate(&tr, tr.last().as_slice()).unwrap();
        let (m, v) = (tr.step_means[0].item(), tr.step_vars[0].item());
        let want = -0.5 * ((2.0 * PI * v).ln() + (tr.last().item() - m).powi(2) / v);
        assert!((q - want).abs() < 1e-14);
    }

    #[test]
    fn identical_components_equal_single_density() {
        let fp = zero_flow(2, 0.3, 1.0, 1);
        let z0 = Matrix::from_rows(&[vec![0.1, 0.2], vec![0.1, 0.2], vec![0.1, 0.2]]);
        let tr = sample_flow(&fp, &z0, &[normal_matrix(&mut stream(5, Stream::Noise), 3, 2)]).unwrap();
        let q = posterior_logpdf_estimate(&tr, &[0.4, -0.1]).unwrap();
        let single = diag_gaussian_logpdf(&[0.4, -0.1], tr.step_means[0].row(0), tr.step_vars[0].row(0));
        assert!((q - single).abs() < 1e-13);
    }

    #[test]
    fn prior_logpdf_examples() {
        assert!((sde_prior_logpdf(1.0, 1.0, &[2.0], &[2.0]) + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let v = sde_prior_logpdf(0.5, 2.0, &[1.0], &[0.0]);
        assert!((v - (-0.5 * (2.0 * PI).ln() - 0.5)).abs() < 1e-15);
        let a = sde_prior_logpdf(0.3, 1.0, &[0.2, -1.0], &[1.0, 0.5]);
        let b = sde_prior_logpdf(0.3, 1.0, &[3.2, 2.0], &[4.0, 3.5]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_kl_is_exactly_zero() {
        let fp = zero_flow(1, 0.3, 1.0, 1);
        let tr = sample_flow(&fp, &Matrix::scalar(0.0), &[Matrix::scalar(1.0)]).unwrap();
        assert_eq!(kl_z_estimate(&tr, 0.0, 0.3, 1.0, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn posterior_equal_to_prior_has_zero_kl() {
        // one step, zero drift, diffusion ν₀ (saturated sigmoid): q(z¹|x) = p_sde
        let mut fp = zero_flow(1, 0.4, 1.0, 1);
        fp.diffusion.b = Matrix::scalar(40.0);
        let s = 10_000;
        let z0 = Matrix::filled(s, 1, 0.7);
        let noise = normal_matrix(&mut stream(6, Stream::Density), s, 1);
        let tr = sample_flow(&fp, &z0, &[noise]).unwrap();
        let z = tr.last();
        let vals: Vec<f64> = (0..s)
            .map(|j| {
                posterior_logpdf_estimate(&tr, z.row(j)).unwrap() - sde_prior_logpdf(0.4, 1.0, z.row(j), &[0.7])
            })
            .collect();
        let kl = kl_z_estimate(&tr, 1.0, 0.4, 1.0, &[0.7]).unwrap();
        let mean = vals.iter().sum::<f64>() / s as f64;
        assert!((kl - mean).abs() < 1e-12);
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
        assert!(kl.abs() <= 3.0 * (var / s as f64).sqrt() + 1e-12, "{kl}");
    }

    #[test]
    fn flow_gradients_match_finite_differences() {
        let mut rng = stream(7, Stream::Init);
        let mut fp = FlowParams::random(&mut rng, 2, 5, 2, 0.3, 1.0, 3).unwrap();
        fp.drift = Dense::random(&mut rng, 5, 2, 0.5);
        fp.diffusion = Dense::random(&mut rng, 5, 2, 0.5);
        let mut p = ParamSet::new();
        fp.insert_into(&mut p).unwrap();
        let z0 = normal_matrix(&mut rng, 4, 2);
        let noise: Vec<Matrix> = (0..3).map(|_| normal_matrix(&mut rng, 4, 2)).collect();
        let f = objective_fn(move |t: &Tape, v: &ParamVars<'_>| {
            let fv = FlowVars::bind(v, 2, 1.0, 3)?;
            let z0 = t.constant(z0.clone());
            let tr = fv.sample(z0, Some(&noise))?;
            let kl = kl_z_single_var(&tr, &fv, z0)?;
            Ok(tr.last().square().sum().add(kl)?)
        });
        assert!(finite_diff_check(&f, &p, 1e-6).unwrap() <= 1e-4);
    }

    #[test]
    fn euler_error_shrinks_with_more_steps() {
        // dz = −z dt + dW from z0 = 1 over T = 1: exact mean e⁻¹, variance (1 − e⁻²)/2.
        // Drift −z is built exactly from a ReLU layer emitting [z, −z].
        let exact_mean = (-1f64).exp();
        let exact_var = (1.0 - (-2f64).exp()) / 2.0;
        let s = 200_000;
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for steps in [1usize, 2, 4, 8, 16, 32] {
            let mut fp = zero_flow(1, 1.0, 1.0, steps);
            fp.trunk = vec![Dense {
                w: Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]),
                b: Matrix::zeros(1, 2),
            }];
            fp.drift = Dense {
                w: Matrix::column(&[-1.0, 1.0]),
                b: Matrix::zeros(1, 1),
            };
            fp.diffusion = Dense {
                w: Matrix::zeros(2, 1),
                b: Matrix::scalar(40.0),
            };
            let mut rng = stream(steps as u64, Stream::Density);
            let noise: Vec<Matrix> = (0..steps).map(|_| normal_matrix(&mut rng, s, 1)).collect();
            let tr = sample_flow(&fp, &Matrix::filled(s, 1, 1.0), &noise).unwrap();
            let z = tr.last().as_slice();
            let mean = z.iter().sum::<f64>() / s as f64;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
            // Euler mean is deterministic: (1 − Δt)^L
            let euler_mean = (1.0 - 1.0 / steps as f64).powi(steps as i32);
            let err = ((euler_mean - exact_mean).abs(), (var - exact_var).abs());
            assert!(err.0 < prev.0 && err.1 < prev.1, "L={steps}: {err:?} vs {prev:?}");
            assert!((mean - euler_mean).abs() < 5.0 * (var / s as f64).sqrt());
            prev = err;
        }
    }
}
