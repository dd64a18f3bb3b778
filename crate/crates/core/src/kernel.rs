//! Stationary RBF (ARD) kernel shared by every output dimension.

use crate::error::{Error, Result};
use crate::gradengine::{ParamSet, ParamVars, Var};
use crate::numerics::Matrix;

pub const LOG_LENGTHSCALES: &str = "kernel.log_lengthscales";
pub const LOG_SIGNAL_VARIANCE: &str = "kernel.log_signal_variance";

/// `k(τ) = h²·exp(−½ Σⱼ τⱼ²/ℓⱼ²)` with log-stored `ℓ` and `h²`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: &[f64], signal_variance: f64) -> Self {
        KernelParams {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
        }
    }

    /// Every length-scale equal to `lengthscale`.
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64) -> Self {
        Self::new(&vec![lengthscale; dim], signal_variance)
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn insert_into(&self, params: &mut ParamSet) -> Result<()> {
        params.insert(LOG_LENGTHSCALES, Matrix::row_vector(&self.log_lengthscales))?;
        params.insert(LOG_SIGNAL_VARIANCE, Matrix::scalar(self.log_signal_variance))
    }

    pub fn from_params(params: &ParamSet) -> Result<Self> {
        Ok(KernelParams {
            log_lengthscales: params.require(LOG_LENGTHSCALES)?.as_slice().to_vec(),
            log_signal_variance: params.require(LOG_SIGNAL_VARIANCE)?.item(),
        })
    }
}

/// Tape handles for the kernel parameters.
#[derive(Clone, Copy, Debug)]
pub struct KernelVars<'t> {
    pub log_lengthscales: Var<'t>,
    pub log_signal_variance: Var<'t>,
}

impl<'t> KernelVars<'t> {
    pub fn bind(vars: &ParamVars<'t>) -> Result<Self> {
        Ok(KernelVars {
            log_lengthscales: vars.get(LOG_LENGTHSCALES)?,
            log_signal_variance: vars.get(LOG_SIGNAL_VARIANCE)?,
        })
    }

    pub fn kmat(&self, x: Var<'t>, x2: Var<'t>) -> Result<Var<'t>> {
        x.rbf(x2, self.log_lengthscales, self.log_signal_variance)
    }
}

fn check_dims(p: &KernelParams, x: &Matrix) -> Result<()> {
    if x.cols() != p.dim() {
        return Err(Error::dims(format!(
            "kernel has {} length-scales, inputs have {} columns",
            p.dim(),
            x.cols()
        )));
    }
    Ok(())
}

/// Cross-covariance between the rows of `x` and `x2`.
pub fn kmat(p: &KernelParams, x: &Matrix, x2: &Matrix) -> Result<Matrix> {
    check_dims(p, x)?;
    check_dims(p, x2)?;
    Ok(crate::gradengine::rbf_matrix(x, x2, &p.lengthscales(), p.signal_variance()))
}

/// Prior variances `k(xᵢ, xᵢ)`, which are all `h²` for a stationary kernel.
pub fn kdiag(p: &KernelParams, x: &Matrix) -> Vec<f64> {
    vec![p.signal_variance(); x.rows()]
}
