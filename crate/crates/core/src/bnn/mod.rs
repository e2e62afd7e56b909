//! Bayesian neural networks: mean-field variational inference and
//! Hamiltonian Monte Carlo over the flat parameter vector of an MLP.

mod hmc;
mod mfvi;
mod predict;
mod target;

pub use hmc::{hmc_run, hmc_sample, leapfrog, HMCConfig, PosteriorChain};
pub use mfvi::{
    elbo_estimate, kl_gaussian, mfvi_fit, mfvi_train, posterior_mean_network, ElboEstimate, MeanFieldPosterior,
    MfviConfig, MfviOutcome,
};
pub use predict::posterior_predict;
pub use target::{
    log_posterior_and_grad, log_posterior_gradient_check, BatchLikelihood, GaussianPosterior, IsotropicGaussian,
    LogDensity, NetworkLikelihood,
};
