//! Sparse variational GP layer.
//!
//! Non-whitened parameterization: `q(u_d) = N(m_d, S_d)` with
//! `S_d = L_d L_dᵀ` and `p(u_d) = N(0, K_mm)`. `K_mm` always carries a
//! diagonal jitter of `1e-6·h²` (the mean of its diagonal), so the model is
//! exactly the one whose prior covariance is the jittered matrix.
//!
//! With `Lm = chol(K_mm)`, `A = Lm⁻¹ K_mn` and `B = Lm⁻ᵀ A = K_mm⁻¹ K_mn`:
//!
//! ```text
//! μ_d = Bᵀ m_d
//! ν_d = h² − colsum(A∘A) + colsum((L_dᵀ B)∘(L_dᵀ B))
//! KL_d = ½[‖Lm⁻¹L_d‖²_F + ‖Lm⁻¹m_d‖² − m + log|K_mm| − log|S_d|]
//! ```

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradengine::{ParamSet, ParamVars, Tape, Var};
use crate::kernel::{self, KernelParams, KernelVars};
use crate::numerics::{self, cholesky_jitter, logdet_chol, Matrix, DEFAULT_RELATIVE_JITTER};
use crate::rng;

pub const INDUCING_RAW: &str = "svgp.inducing_raw";
pub const Q_MEAN: &str = "svgp.q_mean";

/// Name of the raw Cholesky storage for output `d`.
pub fn q_chol_name(d: usize) -> String {
    format!("svgp.q_chol.{d}")
}

/// Floor applied to predictive variances.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseGPState {
    /// m×d_x inducing positions in the original input space.
    pub inducing_raw: Matrix,
    /// m×d_y; column d is `m_d`.
    pub q_means: Matrix,
    /// Lower-triangular `L_d` with positive diagonal, one per output.
    pub q_chols: Vec<Matrix>,
    pub kernel: KernelParams,
}

impl SparseGPState {
    /// `m_d = 0`, `S_d = I`.
    pub fn new(inducing_raw: Matrix, outputs: usize, kernel: KernelParams) -> Self {
        let m = inducing_raw.rows();
        SparseGPState {
            inducing_raw,
            q_means: Matrix::zeros(m, outputs),
            q_chols: vec![Matrix::identity(m); outputs],
            kernel,
        }
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing_raw.rows()
    }

    pub fn outputs(&self) -> usize {
        self.q_means.cols()
    }

    /// Adds the inducing inputs, `q(u)` and kernel arrays to `params`.
    /// Cholesky factors are stored with a log diagonal.
    pub fn insert_into(&self, params: &mut ParamSet) -> Result<()> {
        self.kernel.insert_into(params)?;
        params.insert(INDUCING_RAW, self.inducing_raw.clone())?;
        params.insert(Q_MEAN, self.q_means.clone())?;
        for (d, l) in self.q_chols.iter().enumerate() {
            params.insert(q_chol_name(d), chol_to_raw(l)?)?;
        }
        Ok(())
    }

    pub fn from_params(params: &ParamSet) -> Result<Self> {
        let q_means = params.require(Q_MEAN)?.clone();
        let q_chols = (0..q_means.cols())
            .map(|d| Ok(raw_to_chol(params.require(&q_chol_name(d))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SparseGPState {
            inducing_raw: params.require(INDUCING_RAW)?.clone(),
            q_means,
            q_chols,
            kernel: KernelParams::from_params(params)?,
        })
    }
}

/// Raw storage (log diagonal, zero upper triangle) of a Cholesky factor.
pub fn chol_to_raw(l: &Matrix) -> Result<Matrix> {
    let mut raw = l.clone();
    for i in 0..raw.rows() {
        if !(raw[(i, i)] > 0.0) {
            return Err(Error::config("q_chol", "Cholesky diagonal must be positive"));
        }
        raw[(i, i)] = raw[(i, i)].ln();
        for j in i + 1..raw.cols() {
            raw[(i, j)] = 0.0;
        }
    }
    Ok(raw)
}

pub fn raw_to_chol(raw: &Matrix) -> Matrix {
    let mut l = raw.clone();
    for i in 0..l.rows() {
        l[(i, i)] = l[(i, i)].exp();
        for j in i + 1..l.cols() {
            l[(i, j)] = 0.0;
        }
    }
    l
}

/// Tape handles for the variational and kernel parameters.
#[derive(Clone, Debug)]
pub struct SvgpVars<'t> {
    pub kernel: KernelVars<'t>,
    pub inducing_raw: Var<'t>,
    pub q_mean: Var<'t>,
    /// Lower-triangular factors `L_d` (already mapped from raw storage).
    pub q_chols: Vec<Var<'t>>,
}

impl<'t> SvgpVars<'t> {
    pub fn bind(vars: &ParamVars<'t>) -> Result<Self> {
        let q_mean = vars.get(Q_MEAN)?;
        let q_chols = (0..q_mean.cols())
            .map(|d| vars.get(&q_chol_name(d))?.tril_exp_diag())
            .collect::<Result<Vec<_>>>()?;
        Ok(SvgpVars {
            kernel: KernelVars::bind(vars)?,
            inducing_raw: vars.get(INDUCING_RAW)?,
            q_mean,
            q_chols,
        })
    }

    /// Constant handles for a plain state.
    pub fn constants(tape: &'t Tape, state: &SparseGPState) -> Self {
        SvgpVars {
            kernel: KernelVars {
                log_lengthscales: tape.constant(Matrix::row_vector(&state.kernel.log_lengthscales)),
                log_signal_variance: tape.constant(Matrix::scalar(state.kernel.log_signal_variance)),
            },
            inducing_raw: tape.constant(state.inducing_raw.clone()),
            q_mean: tape.constant(state.q_means.clone()),
            q_chols: state.q_chols.iter().map(|l| tape.constant(l.clone())).collect(),
        }
    }
}

impl<'t> SvgpVars<'t> {
    /// Reads the stored variational parameters as whitened coordinates:
    /// `m_d = L v_d` and `chol(S_d) = L V_d` with `L = chol(K_mm)`, so the
    /// moment and KL formulas above apply unchanged.
    pub fn whiten(self, prior: &InducingPrior<'t>) -> Result<Self> {
        let q_mean = prior.chol.matmul(self.q_mean)?;
        let q_chols = self
            .q_chols
            .iter()
            .map(|v| prior.chol.matmul(*v))
            .collect::<Result<Vec<_>>>()?;
        Ok(SvgpVars {
            q_mean,
            q_chols,
            ..self
        })
    }
}

/// Factored prior covariance of the inducing outputs at `zt`.
pub struct InducingPrior<'t> {
    pub chol: Var<'t>,
    /// Jitter added by escalation on top of the built-in `1e-6·h²`.
    pub extra_jitter: f64,
}

/// `K_mm + 1e-6·h²·I` on the tape.
pub fn kmm_var<'t>(kernel: &KernelVars<'t>, zt: Var<'t>) -> Result<Var<'t>> {
    let tape = zt.tape();
    let m = zt.rows();
    let jitter = tape
        .constant(Matrix::identity(m))
        .scale_by(kernel.log_signal_variance.exp())?
        .scale(DEFAULT_RELATIVE_JITTER);
    kernel.kmat(zt, zt)?.add(jitter)
}

pub fn inducing_prior<'t>(kernel: &KernelVars<'t>, zt: Var<'t>) -> Result<InducingPrior<'t>> {
    let (chol, extra_jitter) = kmm_var(kernel, zt)?.cholesky(0.0)?;
    Ok(InducingPrior { chol, extra_jitter })
}

/// Predictive moments of `q(f|z)`, each n×d_y.
pub fn qf_moments_var<'t>(
    sv: &SvgpVars<'t>,
    prior: &InducingPrior<'t>,
    z: Var<'t>,
    zt: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let tape = z.tape();
    let n = z.rows();
    let kmn = sv.kernel.kmat(zt, z)?;
    let a = prior.chol.tri_solve(kmn, false)?;
    let b = prior.chol.tri_solve(a, true)?;
    let mean = b.matmul_t(sv.q_mean, true, false)?;
    let h2 = tape
        .constant(Matrix::filled(n, 1, 1.0))
        .scale_by(sv.kernel.log_signal_variance.exp())?;
    let base = h2.sub(a.square().sum_cols().t())?;
    let cols = sv
        .q_chols
        .iter()
        .map(|l| base.add(l.matmul_t(b, true, false)?.square().sum_cols().t()))
        .collect::<Result<Vec<_>>>()?;
    let var = if cols.len() == 1 {
        cols[0]
    } else {
        Var::concat_cols(&cols)?
    };
    Ok((mean, var.clamp_min(MIN_VARIANCE)))
}

/// `Σ_d KL[N(m_d, S_d) ‖ N(0, K_mm)]` on the tape.
pub fn kl_u_var<'t>(sv: &SvgpVars<'t>, prior: &InducingPrior<'t>) -> Result<Var<'t>> {
    let m = prior.chol.rows();
    let d_y = sv.q_chols.len();
    let logdet_k = prior.chol.diag()?.ln().sum().scale(2.0 * d_y as f64);
    let maha = prior.chol.tri_solve(sv.q_mean, false)?.square().sum();
    let mut total = maha.add(logdet_k)?;
    for l in &sv.q_chols {
        let trace = prior.chol.tri_solve(*l, false)?.square().sum();
        let logdet_s = l.diag()?.ln().sum().scale(2.0);
        total = total.add(trace)?.sub(logdet_s)?;
    }
    let offset = prior.chol.tape().scalar(-((m * d_y) as f64));
    Ok(total.add_scalar_var(offset)?.scale(0.5))
}

/// Predictive moments of `q(f|z)` for a plain state.
pub fn qf_moments(state: &SparseGPState, z: &Matrix, zt: &Matrix) -> Result<(Matrix, Matrix)> {
    check_latent(state, z, zt)?;
    let tape = Tape::new();
    let sv = SvgpVars::constants(&tape, state);
    let ztv = tape.constant(zt.clone());
    let prior = inducing_prior(&sv.kernel, ztv)?;
    let (mu, nu) = qf_moments_var(&sv, &prior, tape.constant(z.clone()), ztv)?;
    Ok((mu.to_matrix(), nu.to_matrix()))
}

/// `Σ_d KL[q(u_d) ‖ p(u_d)]` with the inducing inputs encoded as `zt`.
pub fn kl_u(state: &SparseGPState, zt: &Matrix) -> Result<f64> {
    check_latent(state, zt, zt)?;
    let tape = Tape::new();
    let sv = SvgpVars::constants(&tape, state);
    let prior = inducing_prior(&sv.kernel, tape.constant(zt.clone()))?;
    Ok(kl_u_var(&sv, &prior)?.item())
}

/// The jittered `K_mm` used by [`qf_moments`] and [`kl_u`].
pub fn kmm(kernel: &KernelParams, zt: &Matrix) -> Result<Matrix> {
    let mut k = kernel::kmat(kernel, zt, zt)?;
    let j = DEFAULT_RELATIVE_JITTER * kernel.signal_variance();
    for i in 0..k.rows() {
        k[(i, i)] += j;
    }
    Ok(k)
}

fn check_latent(state: &SparseGPState, z: &Matrix, zt: &Matrix) -> Result<()> {
    let m = state.num_inducing();
    if zt.rows() != m {
        return Err(Error::dims(format!(
            "{} encoded inducing rows for {m} inducing points",
            zt.rows()
        )));
    }
    if z.cols() != state.kernel.dim() || zt.cols() != state.kernel.dim() {
        return Err(Error::dims("latent dimension differs from kernel dimension"));
    }
    if state.q_chols.len() != state.outputs() || state.q_chols.iter().any(|l| l.shape() != (m, m)) {
        return Err(Error::dims("variational factors do not match the inducing count"));
    }
    Ok(())
}

/// `Σ_d log N(y_d | 0, K_nn + ν_d I)`; the exact Gaussian-likelihood
/// evidence, used as an oracle for the bound.
pub fn exact_log_marginal(kernel: &KernelParams, noise_variances: &[f64], x: &Matrix, y: &Matrix) -> Result<f64> {
    if y.rows() != x.rows() || y.cols() != noise_variances.len() {
        return Err(Error::dims(format!(
            "exact_log_marginal: {} inputs, {}x{} targets, {} noise variances",
            x.rows(),
            y.rows(),
            y.cols(),
            noise_variances.len()
        )));
    }
    let k = kernel::kmat(kernel, x, x)?;
    let n = x.rows() as f64;
    let mut total = 0.0;
    for (d, nv) in noise_variances.iter().enumerate() {
        let mut kd = k.clone();
        for i in 0..x.rows() {
            kd[(i, i)] += nv;
        }
        let f = cholesky_jitter(&kd, 0.0)?;
        let alpha = numerics::tri_solve(&f, &Matrix::column(&y.col(d)), false)?;
        total += -0.5 * alpha.as_slice().iter().map(|v| v * v).sum::<f64>()
            - 0.5 * logdet_chol(&f)
            - 0.5 * n * (2.0 * PI).ln();
    }
    Ok(total)
}

/// k-means (Lloyd, fixed iteration count) centers for inducing inputs.
///
/// Starts from `m` distinct rows chosen by a seeded permutation. When
/// `m ≥ n` every row is returned and the count is clipped to `n`.
pub fn kmeans<R: Rng + ?Sized>(x: &Matrix, m: usize, iterations: usize, rng: &mut R) -> Result<Matrix> {
    let n = x.rows();
    if n == 0 || m == 0 {
        return Err(Error::EmptyDataset);
    }
    if m >= n {
        return Ok(x.clone());
    }
    let perm = rng::permutation(rng, n);
    let mut centers = x.select_rows(&perm[..m]);
    let d = x.cols();
    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        for (i, a) in assign.iter_mut().enumerate() {
            let xi = x.row(i);
            let mut best = (f64::INFINITY, 0);
            for c in 0..m {
                let dist: f64 = xi.iter().zip(centers.row(c)).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            *a = best.1;
        }
        let mut sums = Matrix::zeros(m, d);
        let mut counts = vec![0usize; m];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..m {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (o, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *o = s * inv;
                }
            }
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{chol_solve, gemm};
    use crate::rng::{normal_matrix, stream, Stream};
    use proptest::prelude::*;

    fn random_state(seed: u64, m: usize, d: usize, d_y: usize) -> SparseGPState {
        let mut rng = stream(seed, Stream::Init);
        let z = normal_matrix(&mut rng, m, d);
        let mut s = SparseGPState::new(z, d_y, KernelParams::isotropic(d, 1.3, 0.8));
        s.q_means = normal_matrix(&mut rng, m, d_y);
        for l in &mut s.q_chols {
            let raw = normal_matrix(&mut rng, m, m).scale(0.3);
            *l = raw_to_chol(&raw);
        }
        s
    }

    #[test]
    fn prior_recovery() {
        let mut s = random_state(1, 3, 2, 2);
        let zt = s.inducing_raw.clone();
        let k = kmm(&s.kernel, &zt).unwrap();
        let l = cholesky_jitter(&k, 0.0).unwrap().lower;
        s.q_means = Matrix::zeros(3, 2);
        s.q_chols = vec![l.clone(), l];
        let z = normal_matrix(&mut stream(2, Stream::Init), 5, 2);
        let (mu, nu) = qf_moments(&s, &z, &zt).unwrap();
        assert!(mu.as_slice().iter().all(|v| v.abs() < 1e-12));
        for v in nu.as_slice() {
            assert!((v - 0.8).abs() < 1e-10, "{v}");
        }
        assert!(kl_u(&s, &zt).unwrap().abs() < 1e-10);
    }

    #[test]
    fn single_inducing_mean() {
        let mut s = SparseGPState::new(Matrix::scalar(0.0), 1, KernelParams::isotropic(1, 1.0, 1.0));
        s.q_means = Matrix::scalar(2.0);
        let (mu, _) = qf_moments(&s, &Matrix::scalar(0.0), &Matrix::scalar(0.0)).unwrap();
        // built-in jitter 1e-6·h² shrinks the mean by a factor 1/(1+1e-6)
        assert!((mu.item() - 2.0 / (1.0 + 1e-6)).abs() < 1e-14);
        assert!((mu.item() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn one_dimensional_kl() {
        // K_mm = 1 (+ jitter), m = 1, S = 1
        let mut s = SparseGPState::new(Matrix::scalar(0.0), 1, KernelParams::isotropic(1, 1.0, 1.0));
        s.q_means = Matrix::scalar(1.0);
        let kl = kl_u(&s, &Matrix::scalar(0.0)).unwrap();
        let k: f64 = 1.0 + 1e-6;
        let want = 0.5 * (1.0 / k + 1.0 / k - 1.0 + k.ln());
        assert!((kl - want).abs() < 1e-14);
        assert!((kl - 0.5).abs() < 1e-5);
    }

    #[test]
    fn moments_match_dense_formula() {
        for seed in 0..3 {
            let s = random_state(seed, 2, 2, 1);
            let z = normal_matrix(&mut stream(seed + 10, Stream::Init), 2, 2);
            let zt = s.inducing_raw.clone();
            let (mu, nu) = qf_moments(&s, &z, &zt).unwrap();
            // dense oracle: μ = K_nm K_mm⁻¹ m, Σ = K_nn − K_nm K_mm⁻¹ (K_mm − S) K_mm⁻¹ K_mn
            let k = kmm(&s.kernel, &zt).unwrap();
            let kf = cholesky_jitter(&k, 0.0).unwrap();
            let knm = kernel::kmat(&s.kernel, &z, &zt).unwrap();
            let knn = kernel::kmat(&s.kernel, &z, &z).unwrap();
            let w = chol_solve(&kf, &knm.transpose()).unwrap(); // K_mm⁻¹ K_mn
            let mu_o = gemm(&w, true, &s.q_means, false).unwrap();
            let sm = gemm(&s.q_chols[0], false, &s.q_chols[0], true).unwrap();
            let diff = k.zip_map(&sm, |a, b| a - b);
            let corr = gemm(&gemm(&w, true, &diff, false).unwrap(), false, &w, false).unwrap();
            for i in 0..2 {
                assert!((mu[(i, 0)] - mu_o[(i, 0)]).abs() < 1e-10);
                assert!((nu[(i, 0)] - (knn[(i, i)] - corr[(i, i)])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let s = random_state(4, 3, 1, 1);
        let zt = s.inducing_raw.clone();
        let kl = kl_u(&s, &zt).unwrap();
        let k = kmm(&s.kernel, &zt).unwrap();
        let kf = cholesky_jitter(&k, 0.0).unwrap();
        let l = &s.q_chols[0];
        let sf = numerics::CholFactor {
            lower: l.clone(),
            jitter_used: 0.0,
        };
        let logn = |u: &Matrix, mean: &Matrix, f: &numerics::CholFactor| {
            let r = u.zip_map(mean, |a, b| a - b);
            let a = numerics::tri_solve(f, &r, false).unwrap();
            -0.5 * a.as_slice().iter().map(|v| v * v).sum::<f64>()
                - 0.5 * logdet_chol(f)
                - 0.5 * 3.0 * (2.0 * PI).ln()
        };
        let mut rng = stream(5, Stream::Noise);
        let n = 50_000;
        let mut vals = Vec::with_capacity(n);
        let mean = Matrix::column(&s.q_means.col(0));
        for _ in 0..n {
            let e = normal_matrix(&mut rng, 3, 1);
            let u = gemm(l, false, &e, false).unwrap().zip_map(&mean, |a, b| a + b);
            vals.push(logn(&u, &mean, &sf) - logn(&u, &Matrix::zeros(3, 1), &kf));
        }
        let m = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((m - kl).abs() <= 3.0 * se, "{m} vs {kl} (se {se})");
    }

    #[test]
    fn exact_log_marginal_examples() {
        let k = KernelParams::isotropic(1, 1.0, 1.0);
        let v = exact_log_marginal(&k, &[0.0], &Matrix::scalar(0.0), &Matrix::scalar(0.0)).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-14);
        let v = exact_log_marginal(&k, &[1.0], &Matrix::scalar(0.0), &Matrix::scalar(1.0)).unwrap();
        assert!((v - (-0.5 * (4.0 * PI).ln() - 0.25)).abs() < 1e-14);
    }

    #[test]
    fn kmeans_returns_all_points_when_m_at_least_n() {
        let x = Matrix::column(&[1.0, 2.0, 3.0]);
        let c = kmeans(&x, 5, 10, &mut stream(0, Stream::Cluster)).unwrap();
        assert_eq!(c, x);
    }

    #[test]
    fn kmeans_separates_clusters() {
        let mut v: Vec<f64> = (0..10).map(|i| -5.0 + 0.01 * i as f64).collect();
        v.extend((0..10).map(|i| 5.0 + 0.01 * i as f64));
        let x = Matrix::column(&v);
        let c = kmeans(&x, 2, 10, &mut stream(3, Stream::Cluster)).unwrap();
        let mut cs = c.as_slice().to_vec();
        cs.sort_by(f64::total_cmp);
        assert!((cs[0] + 4.955).abs() < 1e-9 && (cs[1] - 5.045).abs() < 1e-9, "{cs:?}");
    }

    #[test]
    fn raw_storage_round_trip() {
        let l = Matrix::from_rows(&[vec![2.0, 0.0], vec![-0.5, 0.25]]);
        assert_eq!(raw_to_chol(&chol_to_raw(&l).unwrap()), l);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_variances_bounded(seed in 0u64..200, m in 1usize..5, d_y in 1usize..3) {
            let s = random_state(seed, m, 2, d_y);
            let zt = s.inducing_raw.clone();
            prop_assert!(kl_u(&s, &zt).unwrap() >= -1e-12);
            // at S = K_mm the variance never exceeds the prior variance
            let mut p = s.clone();
            let l = cholesky_jitter(&kmm(&s.kernel, &zt).unwrap(), 0.0).unwrap().lower;
            p.q_chols = vec![l; d_y];
            let z = normal_matrix(&mut stream(seed + 1000, Stream::Init), 4, 2);
            let (_, nu) = qf_moments(&p, &z, &zt).unwrap();
            prop_assert!(nu.as_slice().iter().all(|v| *v <= 0.8 + 1e-8 && *v >= MIN_VARIANCE));
        }

        #[test]
        fn kl_zero_only_at_prior(seed in 0u64..200, shift in 1e-3f64..1.0) {
            let mut s = random_state(seed, 3, 2, 1);
            let zt = s.inducing_raw.clone();
            let l = cholesky_jitter(&kmm(&s.kernel, &zt).unwrap(), 0.0).unwrap().lower;
            s.q_means = Matrix::zeros(3, 1);
            s.q_chols = vec![l.clone()];
            prop_assert!(kl_u(&s, &zt).unwrap().abs() < 1e-10);
            s.q_means[(1, 0)] = shift;
            prop_assert!(kl_u(&s, &zt).unwrap() > 1e-10);
        }
    }
}
