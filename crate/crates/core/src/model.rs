//! The four model variants, their ELBOs, prediction and the collapse
//! diagnostic.
//!
//! | variant      | latent code                                   | KL_z                     |
//! |--------------|-----------------------------------------------|--------------------------|
//! | `svgp`       | `z = x`                                       | none                     |
//! | `dkl`        | `z = mean head(x)`                            | none                     |
//! | `dlvkl`      | `z ~ N(μ(x), ν(x))`                           | analytic Gaussian KL     |
//! | `dlvkl-nsde` | `z = z^L`, Euler–Maruyama flow from `proj(x)` | single-trajectory MC KL  |
//!
//! `dlvkl` and `dlvkl-nsde` place their inducing inputs `x̃` in the input
//! space and encode them deterministically (mean head, or the noise-free
//! flow). `dkl` keeps its inducing positions `z̃` free in the latent space,
//! initialized from the projected k-means centers of the inputs.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradengine::{NoiseBundle, NoiseShape, Objective, ParamSet, ParamVars, Tape, Var};
use crate::kernel::KernelParams;
use crate::latent::{default_width, gaussian_kl_var, EncoderParams, EncoderVars, PcaFit, PriorKind, Projection, LOG_NU0};
use crate::likelihood::{
    check_labels, expected_log_lik_var, predictive, reparam, Likelihood, LikelihoodKind, Predictive, LOG_NOISE_VARIANCE,
};
use crate::nsde::{gaussian_logpdf_var, kl_z_estimate, sample_flow, FlowParams, FlowVars};
use crate::numerics::Matrix;
use crate::rng::{normal_matrix, stream, Stream};
use crate::svgp::{inducing_prior, kl_u_var, kmeans, qf_moments_var, InducingPrior, SparseGPState, SvgpVars};

const MODEL_MAGIC: &str = "dlvkl-model v1";

/// Iterations of the k-means inducing-point initialization.
pub const KMEANS_ITERATIONS: usize = 10;

/// Thresholds of the collapse flag.
pub const COLLAPSE_KL: f64 = 1e-3;
pub const COLLAPSE_SPREAD: f64 = 1e-3;

/// Trajectories per probe point for the diagnostic KL estimate.
pub const DIAGNOSTIC_TRAJECTORIES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Svgp,
    Dkl,
    Dlvkl,
    DlvklNsde,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Svgp => "svgp",
            Variant::Dkl => "dkl",
            Variant::Dlvkl => "dlvkl",
            Variant::DlvklNsde => "dlvkl-nsde",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "svgp" => Ok(Variant::Svgp),
            "dkl" => Ok(Variant::Dkl),
            "dlvkl" => Ok(Variant::Dlvkl),
            "dlvkl-nsde" | "nsde" => Ok(Variant::DlvklNsde),
            other => Err(Error::config("variant", format!("unknown variant '{other}'"))),
        }
    }

    /// Whether the latent code is random (and so has a KL term).
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Variant::Dlvkl | Variant::DlvklNsde)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    BinaryClass,
    MultiClass(usize),
    /// No inputs: the encoder reads the outputs themselves.
    Unsupervised,
}

impl Task {
    pub fn name(&self) -> String {
        match self {
            Task::Regression => "regression".into(),
            Task::BinaryClass => "binary".into(),
            Task::MultiClass(k) => format!("multiclass:{k}"),
            Task::Unsupervised => "unsupervised".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "binary" => Ok(Task::BinaryClass),
            "unsupervised" => Ok(Task::Unsupervised),
            _ => match s.strip_prefix("multiclass:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 2 => Ok(Task::MultiClass(k)),
                _ => Err(Error::config("task", format!("unknown task '{s}'"))),
            },
        }
    }

    pub fn likelihood_kind(&self) -> LikelihoodKind {
        match self {
            Task::Regression | Task::Unsupervised => LikelihoodKind::Gaussian,
            Task::BinaryClass => LikelihoodKind::Bernoulli,
            Task::MultiClass(k) => LikelihoodKind::Categorical { classes: *k },
        }
    }

    pub fn is_classification(&self) -> bool {
        self.likelihood_kind().is_classification()
    }
}

/// Architecture and initialization settings of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub task: Task,
    /// Input columns (ignored for unsupervised tasks).
    pub d_x: usize,
    /// Output columns: targets for regression, 1 label column otherwise.
    pub d_y: usize,
    pub d_z: usize,
    pub m: usize,
    pub prior: PriorKind,
    pub beta: f64,
    /// Initial ν₀.
    pub nu0: f64,
    pub flow_time: f64,
    pub flow_steps: usize,
    pub s_predict: usize,
    pub mc_train: usize,
    pub mc_eval: usize,
    pub width: usize,
    pub layers: usize,
    /// Initial RBF length-scale (all dimensions).
    pub lengthscale: f64,
    /// Initial Gaussian noise variance.
    pub noise_variance: f64,
    /// Store `q(u)` in whitened coordinates (see [`SvgpVars::whiten`]).
    pub whiten: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a dataset with `d_x` inputs and `d_y` output columns.
    pub fn new(variant: Variant, task: Task, d_x: usize, d_y: usize) -> Self {
        let d_in = if task == Task::Unsupervised { d_y } else { d_x };
        let flow_steps = if variant == Variant::DlvklNsde { 10 } else { 1 };
        ModelConfig {
            variant,
            task,
            d_x,
            d_y,
            d_z: d_in,
            m: 100,
            prior: PriorKind::Hybrid,
            beta: 1.0,
            nu0: 0.01,
            flow_time: 1.0,
            flow_steps,
            s_predict: 10,
            mc_train: 8,
            mc_eval: 64,
            width: default_width(d_in),
            layers: 3,
            lengthscale: 0.1 * (d_in as f64).sqrt(),
            noise_variance: 0.1,
            whiten: true,
            seed: 0,
        }
    }

    /// Dimension of the encoder input.
    pub fn input_dim(&self) -> usize {
        if self.task == Task::Unsupervised {
            self.d_y
        } else {
            self.d_x
        }
    }

    /// Dimension of the kernel input.
    pub fn latent_dim(&self) -> usize {
        if self.variant == Variant::Svgp {
            self.input_dim()
        } else {
            self.d_z
        }
    }

    /// Columns of the stored inducing positions: latent for `dkl`, input
    /// space otherwise.
    pub fn inducing_dim(&self) -> usize {
        if self.variant == Variant::Dkl {
            self.d_z
        } else {
            self.input_dim()
        }
    }

    /// Number of GP outputs.
    pub fn gp_outputs(&self) -> usize {
        self.task.likelihood_kind().latent_dim(self.d_y)
    }

    pub fn kl_weight(&self) -> f64 {
        match self.prior {
            PriorKind::Sde => 1.0,
            PriorKind::IidStdNormal | PriorKind::Hybrid => self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_y", self.d_y),
            ("d_z", self.d_z),
            ("m", self.m),
            ("flow_steps", self.flow_steps),
            ("s_predict", self.s_predict),
            ("width", self.width),
            ("layers", self.layers),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.input_dim() == 0 {
            return Err(Error::config("d_x", "must be at least 1"));
        }
        if self.task.is_classification() {
            if self.d_y != 1 {
                return Err(Error::config("d_y", "classification expects one label column"));
            }
            if self.mc_train == 0 || self.mc_eval == 0 {
                return Err(Error::config("mc_train", "classification needs Monte Carlo draws"));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta", "must lie in [0, 1]"));
        }
        for (field, v) in [
            ("nu0", self.nu0),
            ("flow_time", self.flow_time),
            ("lengthscale", self.lengthscale),
            ("noise_variance", self.noise_variance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive and finite"));
            }
        }
        match self.variant {
            Variant::Svgp if self.task == Task::Unsupervised => {
                Err(Error::config("variant", "svgp needs observed inputs"))
            }
            Variant::Svgp if self.d_z != self.input_dim() => {
                Err(Error::config("d_z", "svgp uses the inputs directly, so d_z must equal d_x"))
            }
            Variant::Dlvkl if self.flow_steps != 1 => Err(Error::config("flow_steps", "dlvkl is the one-step case")),
            _ => Ok(()),
        }
    }

    /// Key/value echo, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.name().to_string()),
            ("task", self.task.name()),
            ("d_x", self.d_x.to_string()),
            ("d_y", self.d_y.to_string()),
            ("d_z", self.d_z.to_string()),
            ("m", self.m.to_string()),
            ("prior", self.prior.name().to_string()),
            ("beta", self.beta.to_string()),
            ("nu0", self.nu0.to_string()),
            ("flow_time", self.flow_time.to_string()),
            ("flow_steps", self.flow_steps.to_string()),
            ("s_predict", self.s_predict.to_string()),
            ("mc_train", self.mc_train.to_string()),
            ("mc_eval", self.mc_eval.to_string()),
            ("width", self.width.to_string()),
            ("layers", self.layers.to_string()),
            ("lengthscale", self.lengthscale.to_string()),
            ("noise_variance", self.noise_variance.to_string()),
            ("whiten", self.whiten.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// A copy with some [`to_pairs`](Self::to_pairs) keys replaced.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = self.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (k, v) in overrides {
            match pairs.iter_mut().find(|(pk, _)| pk == k) {
                Some(slot) => slot.1 = v.clone(),
                None => return Err(Error::config(k.clone(), "not a model setting")),
            }
        }
        Self::from_pairs(&pairs)
    }

    /// Inverse of [`to_pairs`](Self::to_pairs); every key is required.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::ModelFormat(format!("missing config key '{key}'")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(key, format!("cannot parse '{v}'")))
        }
        let variant = Variant::parse(get("variant")?)?;
        let task = Task::parse(get("task")?)?;
        let mut c = ModelConfig::new(variant, task, num("d_x", get("d_x")?)?, num("d_y", get("d_y")?)?);
        c.d_z = num("d_z", get("d_z")?)?;
        c.m = num("m", get("m")?)?;
        c.prior = PriorKind::parse(get("prior")?)?;
        c.beta = num("beta", get("beta")?)?;
        c.nu0 = num("nu0", get("nu0")?)?;
        c.flow_time = num("flow_time", get("flow_time")?)?;
        c.flow_steps = num("flow_steps", get("flow_steps")?)?;
        c.s_predict = num("s_predict", get("s_predict")?)?;
        c.mc_train = num("mc_train", get("mc_train")?)?;
        c.mc_eval = num("mc_eval", get("mc_eval")?)?;
        c.width = num("width", get("width")?)?;
        c.layers = num("layers", get("layers")?)?;
        c.lengthscale = num("lengthscale", get("lengthscale")?)?;
        c.noise_variance = num("noise_variance", get("noise_variance")?)?;
        c.whiten = num("whiten", get("whiten")?)?;
        c.seed = num("seed", get("seed")?)?;
        Ok(c)
    }
}

/// Which latent code to produce.
#[derive(Clone, Copy, Debug)]
pub enum LatentDraw<'a> {
    /// Encoder mean, or the noise-free flow.
    Mean,
    /// Reparameterized draw; `encoder` for `dlvkl`, one matrix per step in
    /// `flow` for `dlvkl-nsde`. One-row matrices are shared by every row.
    Sample { encoder: Option<&'a Matrix>, flow: &'a [Matrix] },
}

/// Latent codes of a batch and of the inducing inputs, plus the unweighted
/// KL_z summed over the batch when requested.
pub struct LatentVars<'t> {
    pub z: Var<'t>,
    pub zt: Var<'t>,
    pub kl_z: Option<Var<'t>>,
}

/// Pieces of the ELBO on the tape.
pub struct ElboTerms<'t> {
    pub elbo: Var<'t>,
    /// Batch sum of expected log-likelihoods.
    pub ell: Var<'t>,
    /// Batch sum of the unweighted KL_z, if the objective includes it.
    pub kl_z: Option<Var<'t>>,
    pub kl_u: Var<'t>,
}

/// Predictive distribution at a set of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// One predictive per latent draw.
    pub components: Vec<Predictive>,
    /// Average over draws; Gaussian variances follow the law of total
    /// variance.
    pub summary: Predictive,
}

impl Prediction {
    /// Point predictions: Gaussian means, or class probabilities.
    pub fn mean(&self) -> &Matrix {
        match &self.summary {
            Predictive::Gaussian { mean, .. } => mean,
            Predictive::Classes { probs } => probs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CollapseReport {
    /// Average KL_z per probe point (unweighted).
    pub kl_z: f64,
    /// Standard deviation of predictive means across probe points
    /// (largest over output columns).
    pub mean_spread: f64,
    pub collapsed: bool,
}

/// A model: configuration, trainable parameters and the fixed prior-mean
/// projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub projection: Projection,
}

/// Negative ELBO of one batch with fixed noise, for [`crate::gradengine`].
pub struct ElboObjective<'a> {
    pub model: &'a Model,
    pub input: &'a Matrix,
    pub y: &'a Matrix,
    pub noise: &'a NoiseBundle,
    pub n_total: usize,
}

impl Objective for ElboObjective<'_> {
    fn eval<'t>(&self, tape: &'t Tape, params: &ParamVars<'t>) -> Result<Var<'t>> {
        let terms = self
            .model
            .elbo_terms(tape, params, self.input, self.y, self.noise, self.n_total)?;
        Ok(terms.elbo.neg())
    }
}

impl Model {
    /// Initializes every parameter from `config.seed`. `input` is the
    /// training encoder input (inputs, or outputs when unsupervised); it
    /// seeds the inducing inputs by k-means and fits the PCA projection.
    pub fn init(config: ModelConfig, input: &Matrix) -> Result<Model> {
        config.validate()?;
        let (n, d_in) = input.shape();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if d_in != config.input_dim() {
            return Err(Error::dims(format!(
                "model expects {} input columns, data has {d_in}",
                config.input_dim()
            )));
        }
        let d_z = config.latent_dim();
        let mut projection = Projection::for_dims(d_in, d_z);
        if config.variant != Variant::Svgp {
            projection.fit(input)?;
        }
        let mut rng = stream(config.seed, Stream::Init);
        let mut cluster = stream(config.seed, Stream::Cluster);
        let mut inducing = kmeans(input, config.m.min(n), KMEANS_ITERATIONS, &mut cluster)?;
        if config.variant == Variant::Dkl {
            inducing = projection.apply(&inducing)?;
        }
        let kernel = KernelParams::isotropic(d_z, config.lengthscale, 1.0);
        let mut params = ParamSet::new();
        SparseGPState::new(inducing, config.gp_outputs(), kernel).insert_into(&mut params)?;
        if config.task.likelihood_kind() == LikelihoodKind::Gaussian {
            params.insert(
                LOG_NOISE_VARIANCE,
                Matrix::filled(1, config.gp_outputs(), config.noise_variance.ln()),
            )?;
        }
        match config.variant {
            Variant::Svgp => {}
            Variant::Dkl | Variant::Dlvkl => {
                let gaussian = config.variant == Variant::Dlvkl;
                EncoderParams::random(&mut rng, d_in, d_z, config.width, config.layers, gaussian)
                    .insert_into(&mut params)?;
                if gaussian {
                    params.insert(LOG_NU0, Matrix::scalar(config.nu0.ln()))?;
                }
            }
            Variant::DlvklNsde => {
                FlowParams::random(
                    &mut rng,
                    d_z,
                    config.width,
                    config.layers,
                    config.nu0,
                    config.flow_time,
                    config.flow_steps,
                )?
                .insert_into(&mut params)?;
            }
        }
        Ok(Model {
            config,
            params,
            projection,
        })
    }

    /// Variational parameters in their non-whitened form, with the factored
    /// prior at `zt`.
    fn svgp_vars<'t>(&self, vars: &ParamVars<'t>, zt: Var<'t>) -> Result<(SvgpVars<'t>, InducingPrior<'t>)> {
        let sv = SvgpVars::bind(vars)?;
        let prior = inducing_prior(&sv.kernel, zt)?;
        let sv = if self.config.whiten { sv.whiten(&prior)? } else { sv };
        Ok((sv, prior))
    }

    /// The encoder input of a dataset.
    pub fn encoder_input<'a>(&self, x: &'a Matrix, y: &'a Matrix) -> &'a Matrix {
        if self.config.task == Task::Unsupervised {
            y
        } else {
            x
        }
    }

    pub fn likelihood(&self) -> Result<Likelihood> {
        let kind = self.config.task.likelihood_kind();
        Ok(match kind {
            LikelihoodKind::Gaussian => Likelihood {
                kind,
                log_noise_variances: self.params.require(LOG_NOISE_VARIANCE)?.as_slice().to_vec(),
                mc_samples: 1,
            },
            _ => Likelihood {
                kind,
                log_noise_variances: Vec::new(),
                mc_samples: self.config.mc_eval,
            },
        })
    }

    /// Noise needed by one training batch of `n` points.
    pub fn noise_shape(&self, n: usize) -> NoiseShape {
        let c = &self.config;
        NoiseShape {
            n,
            latent_dim: c.latent_dim(),
            output_dim: c.gp_outputs(),
            encoder: c.variant == Variant::Dlvkl,
            flow_steps: if c.variant == Variant::DlvklNsde { c.flow_steps } else { 0 },
            trajectories: 1,
            mc_samples: if c.task.is_classification() { c.mc_train } else { 0 },
        }
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> NoiseBundle {
        NoiseBundle::draw(rng, self.noise_shape(n))
    }

    /// Latent codes on the tape.
    pub fn latent_var<'t>(
        &self,
        vars: &ParamVars<'t>,
        u: Var<'t>,
        draw: LatentDraw<'_>,
        with_kl: bool,
    ) -> Result<LatentVars<'t>> {
        let c = &self.config;
        let raw = vars.get(crate::svgp::INDUCING_RAW)?;
        match c.variant {
            Variant::Svgp => Ok(LatentVars { z: u, zt: raw, kl_z: None }),
            Variant::Dkl => {
                let enc = EncoderVars::bind(vars, c.layers, false)?;
                Ok(LatentVars {
                    z: enc.mean(u)?,
                    zt: raw,
                    kl_z: None,
                })
            }
            Variant::Dlvkl => {
                let enc = EncoderVars::bind(vars, c.layers, true)?;
                let (mu, nu) = enc.forward(u)?;
                let nu = nu.expect("gaussian encoder");
                let z = match draw {
                    LatentDraw::Mean => mu,
                    LatentDraw::Sample { encoder, .. } => {
                        let eps = encoder.ok_or_else(|| Error::config("noise", "encoder noise missing"))?;
                        reparam(mu, nu, eps)?
                    }
                };
                let kl_z = if with_kl {
                    let (mean, log_v) = self.prior_moments(vars, u)?;
                    Some(gaussian_kl_var(mu, nu, mean, log_v)?)
                } else {
                    None
                };
                Ok(LatentVars {
                    z,
                    zt: enc.mean(raw)?,
                    kl_z,
                })
            }
            Variant::DlvklNsde => {
                let flow = FlowVars::bind(vars, c.layers, c.flow_time, c.flow_steps)?;
                let z0 = self.projection.apply_var(u)?;
                let zt = flow.sample(self.projection.apply_var(raw)?, None)?.last();
                let (z, kl_z) = match draw {
                    LatentDraw::Mean => (flow.sample(z0, None)?.last(), None),
                    LatentDraw::Sample { flow: eps, .. } => {
                        let tr = flow.sample(z0, Some(eps))?;
                        let z = tr.last();
                        let kl = if with_kl {
                            let mean = *tr.step_means.last().expect("steps ≥ 1");
                            let var = *tr.step_vars.last().expect("steps ≥ 1");
                            let log_q = gaussian_logpdf_var(z, mean, var)?;
                            let (pm, log_v) = self.prior_moments(vars, u)?;
                            let tape = u.tape();
                            let pm = match pm {
                                Some(m) => m,
                                None => tape.constant(Matrix::zeros(z.rows(), z.cols())),
                            };
                            let pv = tape
                                .constant(Matrix::filled(z.rows(), z.cols(), 1.0))
                                .scale_by(log_v.exp())?;
                            Some(log_q.sub(gaussian_logpdf_var(z, pm, pv)?)?)
                        } else {
                            None
                        };
                        (z, kl)
                    }
                };
                Ok(LatentVars { z, zt, kl_z })
            }
        }
    }

    /// Prior mean (`None` = 0) and 1×1 log variance of the latent prior.
    fn prior_moments<'t>(&self, vars: &ParamVars<'t>, u: Var<'t>) -> Result<(Option<Var<'t>>, Var<'t>)> {
        let tape = u.tape();
        match self.config.prior {
            PriorKind::IidStdNormal => Ok((None, tape.scalar(0.0))),
            PriorKind::Sde | PriorKind::Hybrid => {
                let mean = self.projection.apply_var(u)?;
                let log_v = vars.get(LOG_NU0)?.add(tape.scalar(self.config.flow_time.ln()))?;
                Ok((Some(mean), log_v))
            }
        }
    }

    /// `(N/B)(Σ ELL − w·Σ KL_z) − KL_u` on one batch.
    pub fn elbo_terms<'t>(
        &self,
        tape: &'t Tape,
        vars: &ParamVars<'t>,
        input: &Matrix,
        y: &Matrix,
        noise: &NoiseBundle,
        n_total: usize,
    ) -> Result<ElboTerms<'t>> {
        let b = input.rows();
        if b == 0 || n_total == 0 {
            return Err(Error::EmptyDataset);
        }
        if y.rows() != b {
            return Err(Error::dims("inputs and outputs have different row counts"));
        }
        let kind = self.config.task.likelihood_kind();
        check_labels(kind, y)?;
        let weight = self.config.kl_weight();
        let with_kl = self.config.variant.is_stochastic() && weight != 0.0;
        let draw = LatentDraw::Sample {
            encoder: noise.encoder.as_ref(),
            flow: &noise.flow,
        };
        let lat = self.latent_var(vars, tape.constant(input.clone()), draw, with_kl)?;
        let (sv, prior) = self.svgp_vars(vars, lat.zt)?;
        let (mu, nu) = qf_moments_var(&sv, &prior, lat.z, lat.zt)?;
        let log_noise = match kind {
            LikelihoodKind::Gaussian => Some(vars.get(LOG_NOISE_VARIANCE)?),
            _ => None,
        };
        let ell = expected_log_lik_var(kind, y, mu, nu, log_noise, &noise.likelihood)?;
        let kl_u = kl_u_var(&sv, &prior)?;
        let data = match lat.kl_z {
            Some(k) => ell.sub(k.scale(weight))?,
            None => ell,
        };
        let elbo = data.scale(n_total as f64 / b as f64).sub(kl_u)?;
        Ok(ElboTerms {
            elbo,
            ell,
            kl_z: lat.kl_z,
            kl_u,
        })
    }

    /// ELBO value at the current parameters.
    pub fn elbo(&self, input: &Matrix, y: &Matrix, noise: &NoiseBundle, n_total: usize) -> Result<f64> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let v = self.elbo_terms(&tape, &vars, input, y, noise, n_total)?.elbo.item();
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(v)
    }

    pub fn objective<'a>(
        &'a self,
        input: &'a Matrix,
        y: &'a Matrix,
        noise: &'a NoiseBundle,
        n_total: usize,
    ) -> ElboObjective<'a> {
        ElboObjective {
            model: self,
            input,
            y,
            noise,
            n_total,
        }
    }

    /// Deterministic latent codes (encoder mean or noise-free flow).
    pub fn latent_mean(&self, input: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let lat = self.latent_var(&vars, tape.constant(input.clone()), LatentDraw::Mean, false)?;
        Ok(lat.z.to_matrix())
    }

    /// Latent draws taken by [`predict`](Self::predict).
    pub fn predictive_draws(&self, s: usize) -> usize {
        if self.config.variant.is_stochastic() {
            s.max(1)
        } else {
            1
        }
    }

    /// Averages the predictive over `s` latent draws (one for `svgp` and
    /// `dkl`). All noise is shared across rows, so each point's prediction
    /// does not depend on the other rows.
    pub fn predict<R: Rng + ?Sized>(&self, input: &Matrix, s: usize, rng: &mut R) -> Result<Prediction> {
        if input.cols() != self.config.input_dim() {
            return Err(Error::dims("prediction inputs have the wrong column count"));
        }
        let lik = self.likelihood()?;
        let c = &self.config;
        let d_z = c.latent_dim();
        let mut components = Vec::new();
        for _ in 0..self.predictive_draws(s) {
            let encoder = (c.variant == Variant::Dlvkl).then(|| normal_matrix(rng, 1, d_z));
            let flow: Vec<Matrix> = if c.variant == Variant::DlvklNsde {
                (0..c.flow_steps).map(|_| normal_matrix(rng, 1, d_z)).collect()
            } else {
                Vec::new()
            };
            let mc: Vec<Matrix> = if lik.kind.is_classification() {
                (0..c.mc_eval).map(|_| normal_matrix(rng, 1, c.gp_outputs())).collect()
            } else {
                Vec::new()
            };
            let tape = Tape::new();
            let vars = self.params.bind(&tape);
            let draw = if c.variant.is_stochastic() {
                LatentDraw::Sample {
                    encoder: encoder.as_ref(),
                    flow: &flow,
                }
            } else {
                LatentDraw::Mean
            };
            let lat = self.latent_var(&vars, tape.constant(input.clone()), draw, false)?;
            let (sv, prior) = self.svgp_vars(&vars, lat.zt)?;
            let (mu, nu) = qf_moments_var(&sv, &prior, lat.z, lat.zt)?;
            components.push(predictive(&lik, &mu.to_matrix(), &nu.to_matrix(), &mc)?);
        }
        let summary = mixture_summary(&components)?;
        Ok(Prediction { components, summary })
    }

    /// Average KL_z and predictive-mean spread over probe inputs.
    pub fn collapse_diagnostic<R: Rng + ?Sized>(&self, probe: &Matrix, rng: &mut R) -> Result<CollapseReport> {
        if probe.rows() < 10 {
            return Err(Error::config("probe", "collapse diagnostic needs at least 10 probe points"));
        }
        let n = probe.rows();
        let kl_total = match self.config.variant {
            Variant::Svgp | Variant::Dkl => 0.0,
            Variant::Dlvkl => {
                let tape = Tape::new();
                let vars = self.params.bind(&tape);
                let u = tape.constant(probe.clone());
                let enc = EncoderVars::bind(&vars, self.config.layers, true)?;
                let (mu, nu) = enc.forward(u)?;
                let (mean, log_v) = self.prior_moments(&vars, u)?;
                gaussian_kl_var(mu, nu.expect("gaussian encoder"), mean, log_v)?.item()
            }
            Variant::DlvklNsde => {
                let c = &self.config;
                let fp = FlowParams::from_params(&self.params, c.layers, c.flow_time, c.flow_steps)?;
                let z0 = self.projection.apply(probe)?;
                let prior_means = match c.prior {
                    PriorKind::IidStdNormal => Matrix::zeros(n, z0.cols()),
                    _ => z0.clone(),
                };
                let prior_var = match c.prior {
                    PriorKind::IidStdNormal => 1.0,
                    _ => fp.nu0() * c.flow_time,
                };
                let s = DIAGNOSTIC_TRAJECTORIES;
                let mut total = 0.0;
                for i in 0..n {
                    let start = Matrix::from_rows(&vec![z0.row(i).to_vec(); s]);
                    let noise: Vec<Matrix> = (0..c.flow_steps).map(|_| normal_matrix(rng, s, z0.cols())).collect();
                    let tr = sample_flow(&fp, &start, &noise)?;
                    // the prior density only depends on ν₀T through `nu0·time`
                    total += kl_z_estimate(&tr, 1.0, prior_var, 1.0, prior_means.row(i))?;
                }
                total
            }
        };
        let pred = self.predict(probe, self.config.s_predict, rng)?;
        let means = pred.mean();
        let mut spread = 0.0f64;
        for j in 0..means.cols() {
            let col = means.col(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            spread = spread.max(var.sqrt());
        }
        let kl_z = kl_total / n as f64;
        Ok(CollapseReport {
            kl_z,
            mean_spread: spread,
            collapsed: kl_z < COLLAPSE_KL && spread < COLLAPSE_SPREAD,
        })
    }

    /// Text serialization; see the repository README for the layout.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MODEL_MAGIC);
        out.push('\n');
        for (k, v) in self.config.to_pairs() {
            let _ = writeln!(out, "config {k} {v}");
        }
        match &self.projection {
            Projection::Identity => out.push_str("projection identity\n"),
            Projection::ZeroPad { d_z } => {
                let _ = writeln!(out, "projection zero-pad {d_z}");
            }
            Projection::Pca { d_z, fit: None } => {
                let _ = writeln!(out, "projection pca {d_z} unfitted");
            }
            Projection::Pca { d_z, fit: Some(fit) } => {
                let _ = writeln!(out, "projection pca {d_z} fitted");
                write_array(&mut out, "pca.mean", &Matrix::row_vector(&fit.mean));
                write_array(&mut out, "pca.components", &fit.components);
            }
        }
        for (name, m) in self.params.iter() {
            write_array(&mut out, name, m);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Model> {
        let mut lines = text.lines().enumerate().peekable();
        let bad = |line: usize, msg: &str| Error::ModelFormat(format!("line {}: {msg}", line + 1));
        match lines.next() {
            Some((_, l)) if l.trim() == MODEL_MAGIC => {}
            _ => return Err(Error::ModelFormat(format!("expected header '{MODEL_MAGIC}'"))),
        }
        let mut pairs = Vec::new();
        while let Some((_, l)) = lines.peek() {
            let Some(rest) = l.strip_prefix("config ") else { break };
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            pairs.push((k.to_string(), v.to_string()));
            lines.next();
        }
        let config = ModelConfig::from_pairs(&pairs)?;
        let (pline, pl) = lines.next().ok_or_else(|| bad(pairs.len() + 1, "missing projection"))?;
        let words: Vec<&str> = pl.split_whitespace().collect();
        let projection = match words.as_slice() {
            ["projection", "identity"] => Projection::Identity,
            ["projection", "zero-pad", d] => Projection::ZeroPad {
                d_z: d.parse().map_err(|_| bad(pline, "bad projection size"))?,
            },
            ["projection", "pca", d, state] => {
                let d_z = d.parse().map_err(|_| bad(pline, "bad projection size"))?;
                let fit = match *state {
                    "unfitted" => None,
                    "fitted" => {
                        let (_, mean) = read_array(&mut lines)?;
                        let (_, components) = read_array(&mut lines)?;
                        Some(PcaFit {
                            mean: mean.into_vec(),
                            components,
                        })
                    }
                    _ => return Err(bad(pline, "bad projection state")),
                };
                Projection::Pca { d_z, fit }
            }
            _ => return Err(bad(pline, "expected a projection line")),
        };
        let mut params = ParamSet::new();
        loop {
            match lines.peek() {
                Some((_, l)) if l.trim() == "end" => break,
                Some(_) => {
                    let (name, m) = read_array(&mut lines)?;
                    params.insert(name, m)?;
                }
                None => return Err(Error::ModelFormat("missing 'end'".into())),
            }
        }
        let model = Model {
            config,
            params,
            projection,
        };
        model.check_layout()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_text(&text)
    }

    /// Verifies that the parameter arrays fit the configuration by binding
    /// them the way the objective does.
    fn check_layout(&self) -> Result<()> {
        self.config.validate()?;
        let state = SparseGPState::from_params(&self.params)?;
        let c = &self.config;
        if state.inducing_raw.cols() != c.inducing_dim()
            || state.kernel.dim() != c.latent_dim()
            || state.outputs() != c.gp_outputs()
        {
            return Err(Error::ModelFormat("parameter shapes do not match the config".into()));
        }
        match c.variant {
            Variant::Svgp => {}
            Variant::Dkl | Variant::Dlvkl => {
                EncoderParams::from_params(&self.params, c.layers, c.variant == Variant::Dlvkl)?;
            }
            Variant::DlvklNsde => {
                FlowParams::from_params(&self.params, c.layers, c.flow_time, c.flow_steps)?;
            }
        }
        Ok(())
    }
}

fn write_array(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "param {name} {} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn read_array<'a, I>(lines: &mut std::iter::Peekable<I>) -> Result<(String, Matrix)>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let bad = |line: usize, msg: &str| Error::ModelFormat(format!("line {}: {msg}", line + 1));
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))?;
    let words: Vec<&str> = header.split_whitespace().collect();
    let (name, rows, cols) = match words.as_slice() {
        ["param", name, r, c] => (
            name.to_string(),
            r.parse::<usize>().map_err(|_| bad(hl, "bad row count"))?,
            c.parse::<usize>().map_err(|_| bad(hl, "bad column count"))?,
        ),
        _ => return Err(bad(hl, "expected 'param <name> <rows> <cols>'")),
    };
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (ln, l) = lines.next().ok_or_else(|| bad(hl, "array truncated"))?;
        let before = data.len();
        for w in l.split_whitespace() {
            data.push(w.parse::<f64>().map_err(|_| bad(ln, "bad number"))?);
        }
        if data.len() - before != cols {
            return Err(bad(ln, "wrong number of values in row"));
        }
    }
    Ok((name, Matrix::from_vec(rows, cols, data)?))
}

/// Averages per-draw predictives.
pub fn mixture_summary(components: &[Predictive]) -> Result<Predictive> {
    let first = components
        .first()
        .ok_or_else(|| Error::config("s_predict", "at least one draw needed"))?;
    let w = 1.0 / components.len() as f64;
    match first {
        Predictive::Gaussian { mean, .. } => {
            let (n, d) = mean.shape();
            let mut m1 = Matrix::zeros(n, d);
            let mut m2 = Matrix::zeros(n, d);
            for c in components {
                let Predictive::Gaussian { mean, var } = c else {
                    return Err(Error::dims("mixed predictive kinds"));
                };
                for k in 0..n * d {
                    let mu = mean.as_slice()[k];
                    m1.as_mut_slice()[k] += w * mu;
                    m2.as_mut_slice()[k] += w * (var.as_slice()[k] + mu * mu);
                }
            }
            let var = m2.zip_map(&m1, |s, m| (s - m * m).max(f64::MIN_POSITIVE));
            if components.len() == 1 {
                return Ok(first.clone());
            }
            Ok(Predictive::Gaussian { mean: m1, var })
        }
        Predictive::Classes { probs } => {
            let mut avg = Matrix::zeros(probs.rows(), probs.cols());
            for c in components {
                let Predictive::Classes { probs } = c else {
                    return Err(Error::dims("mixed predictive kinds"));
                };
                for (a, p) in avg.as_mut_slice().iter_mut().zip(probs.as_slice()) {
                    *a += w * p;
                }
            }
            Ok(Predictive::Classes { probs: avg })
        }
    }
}
