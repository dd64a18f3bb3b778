//! Encoders into the latent space and the latent prior.
//!
//! The amortized encoder is an MLP trunk (ReLU hidden layers) with a linear
//! mean head and a softplus variance head. The deterministic DKL encoder is
//! the same trunk with the mean head only. Inducing inputs live in the
//! original input space and are encoded with the mean head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradengine::{softplus_f64, ParamSet, ParamVars, Tape, Var};
use crate::numerics::{gemm, symmetric_eigen, Matrix};
use crate::rng::normal_matrix;

pub const ENCODER: &str = "encoder";
pub const LOG_NU0: &str = "prior.log_nu0";

/// Hidden width used when none is configured: `max(2·d_x, 10)`.
pub fn default_width(d_x: usize) -> usize {
    (2 * d_x).max(10)
}

/// Weight and bias of one dense layer; `y = x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// in×out
    pub w: Matrix,
    /// 1×out
    pub b: Matrix,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Matrix::zeros(input, output),
            b: Matrix::zeros(1, output),
        }
    }

    /// Normal weights with standard deviation `gain/√fan_in`, zero bias.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize, gain: f64) -> Self {
        let sd = gain / (input.max(1) as f64).sqrt();
        Dense {
            w: normal_matrix(rng, input, output).scale(sd),
            b: Matrix::zeros(1, output),
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = gemm(x, false, &self.w, false)?;
        for i in 0..y.rows() {
            for (o, b) in y.row_mut(i).iter_mut().zip(self.b.as_slice()) {
                *o += b;
            }
        }
        Ok(y)
    }

    fn insert_into(&self, params: &mut ParamSet, prefix: &str) -> Result<()> {
        params.insert(format!("{prefix}.w"), self.w.clone())?;
        params.insert(format!("{prefix}.b"), self.b.clone())
    }

    fn from_params(params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(Dense {
            w: params.require(&format!("{prefix}.w"))?.clone(),
            b: params.require(&format!("{prefix}.b"))?.clone(),
        })
    }
}

/// Tape handles for a [`Dense`] layer.
#[derive(Clone, Copy, Debug)]
pub struct DenseVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> DenseVars<'t> {
    pub fn bind(vars: &ParamVars<'t>, prefix: &str) -> Result<Self> {
        Ok(DenseVars {
            w: vars.get(&format!("{prefix}.w"))?,
            b: vars.get(&format!("{prefix}.b"))?,
        })
    }

    pub fn constants(tape: &'t Tape, d: &Dense) -> Self {
        DenseVars {
            w: tape.constant(d.w.clone()),
            b: tape.constant(d.b.clone()),
        }
    }

    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.w)?.add_row(self.b)
    }
}

/// Applies ReLU hidden layers in order.
pub fn trunk_forward<'t>(layers: &[DenseVars<'t>], x: Var<'t>) -> Result<Var<'t>> {
    let mut h = x;
    for l in layers {
        h = l.apply(h)?.relu();
    }
    Ok(h)
}

fn layer_name(prefix: &str, i: usize) -> String {
    format!("{prefix}.h{i}")
}

/// Encoder weights: ReLU trunk plus heads.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub trunk: Vec<Dense>,
    pub mean_head: Dense,
    /// Softplus variance head; absent for the deterministic DKL encoder.
    pub var_head: Option<Dense>,
}

impl EncoderParams {
    /// He-scaled trunk, unit-gain heads, zero biases.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        d_x: usize,
        d_z: usize,
        width: usize,
        layers: usize,
        gaussian: bool,
    ) -> Self {
        let mut trunk = Vec::with_capacity(layers);
        let mut input = d_x;
        for _ in 0..layers {
            trunk.push(Dense::random(rng, input, width, 2f64.sqrt()));
            input = width;
        }
        let mean_head = Dense::random(rng, input, d_z, 1.0);
        let var_head = gaussian.then(|| Dense::random(rng, input, d_z, 1.0));
        EncoderParams {
            trunk,
            mean_head,
            var_head,
        }
    }

    pub fn zeros(d_x: usize, d_z: usize, width: usize, layers: usize, gaussian: bool) -> Self {
        let mut trunk = Vec::with_capacity(layers);
        let mut input = d_x;
        for _ in 0..layers {
            trunk.push(Dense::zeros(input, width));
            input = width;
        }
        EncoderParams {
            trunk,
            mean_head: Dense::zeros(input, d_z),
            var_head: gaussian.then(|| Dense::zeros(input, d_z)),
        }
    }

    /// Exact identity map (`d_z = d_x = d`): the first layer emits
    /// `[x, −x]`, later layers pass it through and the mean head takes the
    /// difference of the two ReLU halves. Needs `width ≥ 2d`.
    pub fn identity(d: usize, width: usize, layers: usize, gaussian: bool) -> Result<Self> {
        if width < 2 * d || layers == 0 {
            return Err(Error::config("width", "identity encoder needs width >= 2*d and a hidden layer"));
        }
        let mut enc = EncoderParams::zeros(d, d, width, layers, gaussian);
        for j in 0..d {
            enc.trunk[0].w[(j, j)] = 1.0;
            enc.trunk[0].w[(j, d + j)] = -1.0;
        }
        for l in enc.trunk.iter_mut().skip(1) {
            for j in 0..2 * d {
                l.w[(j, j)] = 1.0;
            }
        }
        for j in 0..d {
            enc.mean_head.w[(j, j)] = 1.0;
            enc.mean_head.w[(d + j, j)] = -1.0;
        }
        Ok(enc)
    }

    pub fn insert_into(&self, params: &mut ParamSet) -> Result<()> {
        for (i, l) in self.trunk.iter().enumerate() {
            l.insert_into(params, &layer_name(ENCODER, i))?;
        }
        self.mean_head.insert_into(params, &format!("{ENCODER}.mean"))?;
        if let Some(v) = &self.var_head {
            v.insert_into(params, &format!("{ENCODER}.var"))?;
        }
        Ok(())
    }

    pub fn from_params(params: &ParamSet, layers: usize, gaussian: bool) -> Result<Self> {
        let trunk = (0..layers)
            .map(|i| Dense::from_params(params, &layer_name(ENCODER, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderParams {
            trunk,
            mean_head: Dense::from_params(params, &format!("{ENCODER}.mean"))?,
            var_head: if gaussian {
                Some(Dense::from_params(params, &format!("{ENCODER}.var"))?)
            } else {
                None
            },
        })
    }

    fn hidden(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for l in &self.trunk {
            h = l.apply(&h)?.map(|v| v.max(0.0));
        }
        Ok(h)
    }
}

/// Tape handles for an encoder.
#[derive(Clone, Debug)]
pub struct EncoderVars<'t> {
    pub trunk: Vec<DenseVars<'t>>,
    pub mean_head: DenseVars<'t>,
    pub var_head: Option<DenseVars<'t>>,
}

impl<'t> EncoderVars<'t> {
    pub fn bind(vars: &ParamVars<'t>, layers: usize, gaussian: bool) -> Result<Self> {
        Ok(EncoderVars {
            trunk: (0..layers)
                .map(|i| DenseVars::bind(vars, &layer_name(ENCODER, i)))
                .collect::<Result<_>>()?,
            mean_head: DenseVars::bind(vars, &format!("{ENCODER}.mean"))?,
            var_head: if gaussian {
                Some(DenseVars::bind(vars, &format!("{ENCODER}.var"))?)
            } else {
                None
            },
        })
    }

    pub fn constants(tape: &'t Tape, enc: &EncoderParams) -> Self {
        EncoderVars {
            trunk: enc.trunk.iter().map(|d| DenseVars::constants(tape, d)).collect(),
            mean_head: DenseVars::constants(tape, &enc.mean_head),
            var_head: enc.var_head.as_ref().map(|d| DenseVars::constants(tape, d)),
        }
    }

    /// Mean and (for the Gaussian encoder) softplus variance.
    pub fn forward(&self, x: Var<'t>) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let h = trunk_forward(&self.trunk, x)?;
        let mean = self.mean_head.apply(h)?;
        let var = match &self.var_head {
            Some(v) => Some(v.apply(h)?.softplus()),
            None => None,
        };
        Ok((mean, var))
    }

    pub fn mean(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.mean_head.apply(trunk_forward(&self.trunk, x)?)
    }
}

/// `(μz, νz)` of the amortized Gaussian encoder.
pub fn encode_gaussian(enc: &EncoderParams, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let head = enc
        .var_head
        .as_ref()
        .ok_or_else(|| Error::config("encoder", "deterministic encoder has no variance head"))?;
    let h = enc.hidden(x)?;
    Ok((enc.mean_head.apply(&h)?, head.apply(&h)?.map(softplus_f64)))
}

/// Deterministic (mean-head) encoding, used for DKL inputs and for
/// inducing inputs.
pub fn encode_mean(enc: &EncoderParams, x: &Matrix) -> Result<Matrix> {
    enc.mean_head.apply(&enc.hidden(x)?)
}

/// Encoded inducing positions `z̃ = mean head(x̃)`.
pub fn encode_inducing(enc: &EncoderParams, state: &crate::svgp::SparseGPState) -> Result<Matrix> {
    encode_mean(enc, &state.inducing_raw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    /// `N(0, I)` on every latent coordinate; KL weighted by β.
    IidStdNormal,
    /// `N(proj(x), ν₀T·I)`; KL weight 1.
    Sde,
    /// The SDE prior with KL weight β.
    Hybrid,
}

impl PriorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PriorKind::IidStdNormal => "iid",
            PriorKind::Sde => "sde",
            PriorKind::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iid" | "iid-std-normal" => Ok(PriorKind::IidStdNormal),
            "sde" => Ok(PriorKind::Sde),
            "hybrid" => Ok(PriorKind::Hybrid),
            other => Err(Error::config("prior", format!("unknown prior '{other}'"))),
        }
    }
}

/// Latent prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub beta: f64,
    /// Initial diffusion variance ν₀ (trainable afterwards).
    pub nu0: f64,
    pub projection: Projection,
}

impl PriorSpec {
    pub fn new(kind: PriorKind, beta: f64, nu0: f64, projection: Projection) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::config("beta", "must lie in [0, 1]"));
        }
        if !(nu0 > 0.0) {
            return Err(Error::config("nu0", "must be positive"));
        }
        Ok(PriorSpec {
            kind,
            beta,
            nu0,
            projection,
        })
    }

    /// Weight of the latent KL term in the objective.
    pub fn weight(&self) -> f64 {
        match self.kind {
            PriorKind::Sde => 1.0,
            PriorKind::IidStdNormal | PriorKind::Hybrid => self.beta,
        }
    }

    pub fn uses_sde(&self) -> bool {
        self.kind != PriorKind::IidStdNormal
    }
}

/// Fitted principal components.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaFit {
    pub mean: Vec<f64>,
    /// d_x×d_z, columns are unit eigenvectors in descending eigenvalue order.
    pub components: Matrix,
}

/// Map from inputs to the prior mean in latent space.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Identity,
    /// Input columns followed by zeros up to `d_z`.
    ZeroPad { d_z: usize },
    /// Leading principal-component scores.
    Pca { d_z: usize, fit: Option<PcaFit> },
}

impl Projection {
    /// Identity, zero-pad or (unfitted) PCA depending on `d_z` vs `d_x`.
    pub fn for_dims(d_x: usize, d_z: usize) -> Self {
        match d_z.cmp(&d_x) {
            std::cmp::Ordering::Equal => Projection::Identity,
            std::cmp::Ordering::Greater => Projection::ZeroPad { d_z },
            std::cmp::Ordering::Less => Projection::Pca { d_z, fit: None },
        }
    }

    /// Fits PCA components on `x`; other variants are unchanged.
    pub fn fit(&mut self, x: &Matrix) -> Result<()> {
        if let Projection::Pca { d_z, fit } = self {
            *fit = Some(fit_pca(x, *d_z)?);
        }
        Ok(())
    }

    pub fn output_dim(&self, d_x: usize) -> usize {
        match self {
            Projection::Identity => d_x,
            Projection::ZeroPad { d_z } | Projection::Pca { d_z, .. } => *d_z,
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        Ok(self.apply_var(tape.constant(x.clone()))?.to_matrix())
    }

    pub fn apply_var<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        match self {
            Projection::Identity => Ok(x),
            Projection::ZeroPad { d_z } => {
                if *d_z < x.cols() {
                    return Err(Error::dims("zero-pad projection cannot shrink"));
                }
                if *d_z == x.cols() {
                    return Ok(x);
                }
                let pad = tape.constant(Matrix::zeros(x.rows(), d_z - x.cols()));
                Var::concat_cols(&[x, pad])
            }
            Projection::Pca { fit, .. } => {
                let fit = fit.as_ref().ok_or(Error::ProjectionNotFitted)?;
                if fit.mean.len() != x.cols() {
                    return Err(Error::dims("PCA fitted on a different input dimension"));
                }
                let neg_mean: Vec<f64> = fit.mean.iter().map(|m| -m).collect();
                x.add_row(tape.constant(Matrix::row_vector(&neg_mean)))?
                    .matmul(tape.constant(fit.components.clone()))
            }
        }
    }
}

/// Leading `d_z` principal directions of `x` (population covariance). Each
/// direction's largest-magnitude entry is made positive.
pub fn fit_pca(x: &Matrix, d_z: usize) -> Result<PcaFit> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if d_z > d {
        return Err(Error::dims("PCA cannot produce more components than inputs"));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.col(j).iter().sum::<f64>() / n as f64).collect();
    let centered = Matrix::from_vec(
        n,
        d,
        (0..n)
            .flat_map(|i| x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
            .collect(),
    )?;
    let cov = gemm(&centered, true, &centered, false)?.scale(1.0 / n as f64);
    let (_, vecs) = symmetric_eigen(&cov)?;
    let mut components = Matrix::zeros(d, d_z);
    for c in 0..d_z {
        let col = vecs.col(c);
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (r, v) in col.iter().enumerate() {
            components[(r, c)] = sign * v;
        }
    }
    Ok(PcaFit { mean, components })
}

/// `Σ KL[N(μ, ν) ‖ N(m, v)]` over every entry, with the prior variance
/// `v = exp(log_v)` shared by all entries (1×1). `prior_mean = None` means 0.
pub fn gaussian_kl_var<'t>(
    mu: Var<'t>,
    nu: Var<'t>,
    prior_mean: Option<Var<'t>>,
    log_v: Var<'t>,
) -> Result<Var<'t>> {
    let tape = mu.tape();
    let count = mu.rows() * mu.cols();
    let diff = match prior_mean {
        Some(m) => mu.sub(m)?,
        None => mu,
    };
    let inv_v = log_v.neg().exp();
    let quad = nu.add(diff.square())?.sum().scale_by(inv_v)?;
    let logs = log_v.scale(count as f64).sub(nu.ln().sum())?;
    quad.add(logs)?
        .add_scalar_var(tape.scalar(-(count as f64)))
        .map(|v| v.scale(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradengine::{finite_diff_check, objective_fn};
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn zero_encoder_outputs() {
        let enc = EncoderParams::zeros(3, 2, 10, 3, true);
        let x = normal_matrix(&mut stream(0, Stream::Init), 4, 3);
        let (mu, nu) = encode_gaussian(&enc, &x).unwrap();
        assert!(mu.as_slice().iter().all(|v| *v == 0.0));
        assert!(nu.as_slice().iter().all(|v| (v - 2f64.ln()).abs() < 1e-15));
        assert!((nu[(0, 0)] - 0.6931).abs() < 1e-4);
        let state = crate::svgp::SparseGPState::new(
            x.clone(),
            1,
            crate::kernel::KernelParams::isotropic(2, 1.0, 1.0),
        );
        assert!(encode_inducing(&enc, &state).unwrap().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_encoder_reproduces_inputs() {
        let enc = EncoderParams::identity(2, 10, 3, false).unwrap();
        let x = normal_matrix(&mut stream(1, Stream::Init), 6, 2);
        assert_eq!(encode_mean(&enc, &x).unwrap(), x);
        let state = crate::svgp::SparseGPState::new(
            x.clone(),
            1,
            crate::kernel::KernelParams::isotropic(2, 1.0, 1.0),
        );
        assert_eq!(encode_inducing(&enc, &state).unwrap(), x);
    }

    #[test]
    fn inducing_encoding_moves_with_weights() {
        let mut rng = stream(2, Stream::Init);
        let enc = EncoderParams::random(&mut rng, 2, 2, 10, 3, false);
        let x = normal_matrix(&mut rng, 5, 2);
        let state = crate::svgp::SparseGPState::new(x, 1, crate::kernel::KernelParams::isotropic(2, 1.0, 1.0));
        let a = encode_inducing(&enc, &state).unwrap();
        let mut moved = enc.clone();
        moved.mean_head.w[(0, 0)] += 0.1;
        moved.trunk[0].w[(1, 3)] += 0.1;
        let b = encode_inducing(&moved, &state).unwrap();
        assert!(a.zip_map(&b, |u, v| (u - v).abs()).sum() > 1e-6);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = stream(3, Stream::Init);
        let enc = EncoderParams::random(&mut rng, 2, 2, 6, 2, true);
        let x = normal_matrix(&mut rng, 5, 2);
        let mut p = ParamSet::new();
        enc.insert_into(&mut p).unwrap();
        let f = objective_fn(move |t: &Tape, v: &ParamVars<'_>| {
            let e = EncoderVars::bind(v, 2, true)?;
            let (mu, nu) = e.forward(t.constant(x.clone()))?;
            Ok(mu.square().sum().add(nu.expect("gaussian").sum())?)
        });
        assert!(finite_diff_check(&f, &p, 1e-6).unwrap() <= 1e-4);
    }

    #[test]
    fn projection_examples() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
        assert_eq!(Projection::for_dims(2, 2).apply(&x).unwrap(), x);
        let pad = Projection::for_dims(1, 2).apply(&Matrix::scalar(3.0)).unwrap();
        assert_eq!(pad.as_slice(), &[3.0, 0.0]);
        assert!(matches!(
            Projection::for_dims(3, 1).apply(&Matrix::zeros(2, 3)),
            Err(Error::ProjectionNotFitted)
        ));
    }

    #[test]
    fn pca_scores_follow_leading_axis() {
        let mut rng = stream(4, Stream::Data);
        let noise = normal_matrix(&mut rng, 200, 3);
        let t = normal_matrix(&mut rng, 200, 1);
        let axis = [0.6, 0.0, 0.8];
        let mut x = Matrix::zeros(200, 3);
        for i in 0..200 {
            for j in 0..3 {
                x[(i, j)] = 3.0 * t.as_slice()[i] * axis[j] + 0.1 * noise[(i, j)];
            }
        }
        let mut p = Projection::for_dims(3, 1);
        p.fit(&x).unwrap();
        let scores = p.apply(&x).unwrap();
        // oracle: eigenvector of the covariance via power iteration
        let mean: Vec<f64> = (0..3).map(|j| x.col(j).iter().sum::<f64>() / 200.0).collect();
        let mut cov = [[0.0; 3]; 3];
        for i in 0..200 {
            for a in 0..3 {
                for b in 0..3 {
                    cov[a][b] += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]) / 200.0;
                }
            }
        }
        let mut v = [1.0, 1.0, 1.0];
        for _ in 0..500 {
            let w: Vec<f64> = (0..3).map(|a| (0..3).map(|b| cov[a][b] * v[b]).sum()).collect();
            let nrm = w.iter().map(|u| u * u).sum::<f64>().sqrt();
            for a in 0..3 {
                v[a] = w[a] / nrm;
            }
        }
        let sign = if v[2] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..200 {
            let s: f64 = (0..3).map(|j| (x[(i, j)] - mean[j]) * v[j] * sign).sum();
            assert!((scores.as_slice()[i] - s).abs() < 1e-8);
        }
    }

    #[test]
    fn gaussian_kl_closed_form() {
        let t = Tape::new();
        let kl = gaussian_kl_var(
            t.constant(Matrix::row_vector(&[0.0, 1.0])),
            t.constant(Matrix::row_vector(&[1.0, 0.5])),
            None,
            t.scalar(0.0),
        )
        .unwrap()
        .item();
        let want = 0.5 * (0.5 + 1.0 - 1.0 - 0.5f64.ln());
        assert!((kl - want).abs() < 1e-15);
        let eq = gaussian_kl_var(
            t.constant(Matrix::row_vector(&[2.0])),
            t.constant(Matrix::row_vector(&[0.3])),
            Some(t.constant(Matrix::row_vector(&[2.0]))),
            t.scalar(0.3f64.ln()),
        )
        .unwrap()
        .item();
        assert!(eq.abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn variance_head_is_positive(seed in 0u64..300, scale in 0.1f64..50.0) {
            let mut rng = stream(seed, Stream::Init);
            let enc = EncoderParams::random(&mut rng, 3, 2, 10, 3, true);
            let x = normal_matrix(&mut rng, 8, 3).scale(scale);
            let (_, nu) = encode_gaussian(&enc, &x).unwrap();
            prop_assert!(nu.as_slice().iter().all(|v| *v > 0.0));
        }

        #[test]
        fn pad_then_truncate_is_identity(seed in 0u64..200, d_x in 1usize..4, extra in 0usize..3) {
            let x = normal_matrix(&mut stream(seed, Stream::Data), 5, d_x);
            let z = Projection::for_dims(d_x, d_x + extra).apply(&x).unwrap();
            prop_assert_eq!(z.select_cols(0, d_x), x);
        }

        #[test]
        fn deterministic_encoder_is_the_mean_head(seed in 0u64..200) {
            let mut rng = stream(seed, Stream::Init);
            let g = EncoderParams::random(&mut rng, 2, 2, 10, 3, true);
            let x = normal_matrix(&mut rng, 4, 2);
            let mut det = g.clone();
            det.var_head = None;
            prop_assert_eq!(encode_mean(&det, &x).unwrap(), encode_gaussian(&g, &x).unwrap().0);
        }
    }
}
