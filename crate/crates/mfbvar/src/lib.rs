//! Estimation engine for large mixed-frequency Bayesian VARs with factor
//! stochastic volatility.
//!
//! The model is a monthly VAR(p) in which quarterly series are treated as
//! partially observed: each observed quarterly value is a triangular
//! aggregate of five latent monthly values. The error covariance is driven
//! by a factor stochastic volatility (FSV) decomposition, which renders the
//! VAR equations conditionally independent and unlocks two computational
//! devices used throughout this crate:
//!
//! * simulation smoothing of the latent monthly series on a compact state
//!   space (quarterly lag window only), with adaptive state augmentation for
//!   the ragged edge and univariate (sequential) filtering;
//! * equation-by-equation sampling of the regression parameters in parallel,
//!   using the Rue or Bhattacharya structured Gaussian samplers.
//!
//! Module map:
//!
//! * [`core_model`] - domain types, companion/compact state-space forms,
//!   triangular aggregation and selection matrices.
//! * [`priors`] - Minnesota prior for the regression parameters and the FSV
//!   hyperpriors.
//! * [`state_smoother`] - Kalman filtering (multivariate reference and
//!   univariate), smoothing, adaptive augmentation and the mean-correction
//!   simulation smoother.
//! * [`fsv`] - factor stochastic volatility Gibbs block: loadings, factors,
//!   log-volatility paths via the 10-state mixture, hyperparameters with
//!   interweaving.
//! * [`reg_sampler`] - row-wise regression parameter draws (Rue /
//!   Bhattacharya) with deterministic parallelism.
//! * [`gibbs`] - the full MCMC loop, chain storage and checkpointing.
//! * [`diagnostics`] - inefficiency factors, sign identification, implied
//!   GDP volatility.
//! * [`synthetic`] - simulation of datasets from known parameters, used by
//!   the benchmark harness and recovery tests.

pub mod core_model;
pub mod diagnostics;
mod error;
pub mod fsv;
pub mod gibbs;
pub mod priors;
pub mod reg_sampler;
pub mod rng;
pub mod state_smoother;
pub mod store;
pub mod synthetic;

pub use error::{MfbvarError, Result};
