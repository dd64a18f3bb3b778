//! Deep latent-variable kernel learning.
//!
//! A stochastic encoder (a Gaussian amortized encoder, or a neural SDE flow
//! integrated with Euler–Maruyama) maps inputs into a latent space where a
//! sparse variational Gaussian process models the outputs. Training
//! maximizes a β-weighted evidence lower bound with Adam. SVGP and deep
//! kernel learning (DKL) baselines share the same machinery.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradengine;
pub mod kernel;
pub mod latent;
pub mod likelihood;
pub mod model;
pub mod nsde;
pub mod numerics;
pub mod report;
pub mod rng;
pub mod svgp;
pub mod train;

pub use error::{Error, Result};
pub use numerics::Matrix;
