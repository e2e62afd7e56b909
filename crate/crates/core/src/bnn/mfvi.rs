use serde::{Deserialize, Serialize};

use super::target::{BatchLikelihood, NetworkLikelihood};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{mlp_init, Adam, MLPParams};
use crate::numerics::{sigmoid, softplus, softplus_inv, RngStream};

/// Lower clamp on `ρ` so `softplus(ρ)` stays a positive normal number.
const RHO_MIN: f64 = -700.0;

/// Fully factorized Gaussian `q(ω) = Π N(μᵢ, softplus(ρᵢ)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPosterior {
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl MeanFieldPosterior {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: rho.len(),
            });
        }
        if mu.iter().chain(&rho).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("variational parameters"));
        }
        Ok(Self { mu, rho })
    }

    /// `q` with mean `mu` and every standard deviation equal to `std`.
    pub fn with_std(mu: Vec<f64>, std: f64) -> Result<Self> {
        let rho = vec![softplus_inv(std); mu.len()];
        Self::new(mu, rho)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn std(&self, i: usize) -> f64 {
        softplus(self.rho[i].max(RHO_MIN))
    }

    /// `ω = μ + σ ⊙ ε` with `ε` written into `eps`.
    fn draw_into(&self, rng: &mut RngStream, eps: &mut [f64], omega: &mut [f64]) {
        rng.fill_standard_normal(eps);
        for i in 0..self.mu.len() {
            omega[i] = self.mu[i] + self.std(i) * eps[i];
        }
    }

    /// One reparameterized draw.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut eps = vec![0.0; self.len()];
        let mut omega = vec![0.0; self.len()];
        self.draw_into(rng, &mut eps, &mut omega);
        omega
    }
}

/// `KL(q ‖ N(0, precision⁻¹ I))` in closed form.
pub fn kl_gaussian(q: &MeanFieldPosterior, prior_precision: f64) -> f64 {
    let var_p = 1.0 / prior_precision;
    let kl: f64 = (0..q.len())
        .map(|i| {
            let s = q.std(i);
            let m = q.mu[i];
            0.5 * var_p.ln() - s.ln() + (s * s + m * m) / (2.0 * var_p) - 0.5
        })
        .sum();
    kl.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    /// Monte Carlo standard error of the likelihood term.
    pub std_error: f64,
}

/// `E_q[log p(D|ω)] − kl_weight · KL(q‖p)` with the expectation estimated
/// from `n_mc` reparameterized draws.
pub fn elbo_estimate<L: BatchLikelihood>(
    q: &MeanFieldPosterior,
    model: &L,
    prior_precision: f64,
    n_mc: usize,
    kl_weight: f64,
    rng: &mut RngStream,
) -> Result<ElboEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be >= 1".into()));
    }
    if q.len() != model.n_params() {
        return Err(Error::DimensionMismatch {
            expected: model.n_params(),
            got: q.len(),
        });
    }
    let all: Vec<usize> = (0..model.n_data()).collect();
    let mut eps = vec![0.0; q.len()];
    let mut omega = vec![0.0; q.len()];
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n_mc {
        q.draw_into(rng, &mut eps, &mut omega);
        let (ll, _) = model.log_lik_and_grad(&omega, &all)?;
        sum += ll;
        sq += ll * ll;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = if n_mc > 1 {
        ((sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let value = mean - kl_weight * kl_gaussian(q, prior_precision);
    if !value.is_finite() {
        return Err(Error::NonFinite("ELBO"));
    }
    Ok(ElboEstimate {
        value,
        std_error: (var / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfviConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub prior_precision: f64,
    pub rho_init: f64,
    /// q-draws averaged at prediction time.
    pub n_predict: usize,
    pub seed: u64,
}

impl Default for MfviConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            kl_weight: 0.1,
            prior_precision: 1.0,
            rho_init: -5.0,
            n_predict: 100,
            seed: 0,
        }
    }
}

impl MfviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.n_predict == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and n_predict must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.prior_precision > 0.0 && self.kl_weight >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning_rate and prior_precision must be > 0, kl_weight >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MfviOutcome {
    pub posterior: MeanFieldPosterior,
    /// Mean single-draw minibatch ELBO estimate of each epoch.
    pub epoch_elbos: Vec<f64>,
}

/// Maximizes the ELBO with one reparameterized draw per minibatch and Adam
/// on `(μ, ρ)`. The minibatch likelihood is scaled by `N / B`.
pub fn mfvi_fit<L: BatchLikelihood>(model: &L, init_mu: Vec<f64>, cfg: &MfviConfig) -> Result<MfviOutcome> {
    cfg.validate()?;
    let n_params = model.n_params();
    if init_mu.len() != n_params {
        return Err(Error::DimensionMismatch {
            expected: n_params,
            got: init_mu.len(),
        });
    }
    let rho = vec![cfg.rho_init; n_params];
    let mut q = MeanFieldPosterior::new(init_mu, rho)?;
    let mut rng = RngStream::new(cfg.seed);
    let mut adam = Adam::new(2 * n_params, cfg.learning_rate);
    let n = model.n_data();
    let mut order: Vec<usize> = (0..n).collect();
    let mut eps = vec![0.0; n_params];
    let mut omega = vec![0.0; n_params];
    let mut theta = vec![0.0; 2 * n_params];
    let mut grad = vec![0.0; 2 * n_params];
    let var_p = 1.0 / cfg.prior_precision;
    let mut epoch_elbos = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            q.draw_into(&mut rng, &mut eps, &mut omega);
            let (ll, g) = model.log_lik_and_grad(&omega, batch).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence(format!("non-finite ELBO in epoch {epoch}")),
                other => other,
            })?;
            let scale = n as f64 / batch.len() as f64;
            let kl = kl_gaussian(&q, cfg.prior_precision);
            let elbo = scale * ll - cfg.kl_weight * kl;
            if !elbo.is_finite() {
                return Err(Error::Divergence(format!("non-finite ELBO in epoch {epoch}")));
            }
            // Adam descends, so store gradients of −ELBO.
            for i in 0..n_params {
                let s = q.std(i);
                let dsig = sigmoid(q.rho[i].max(RHO_MIN));
                let d_omega = scale * g[i];
                let kl_mu = q.mu[i] / var_p;
                let kl_sigma = -1.0 / s + s / var_p;
                grad[i] = -(d_omega - cfg.kl_weight * kl_mu);
                grad[n_params + i] = -(d_omega * eps[i] - cfg.kl_weight * kl_sigma) * dsig;
                theta[i] = q.mu[i];
                theta[n_params + i] = q.rho[i];
            }
            adam.step(&mut theta, &grad);
            q.mu.copy_from_slice(&theta[..n_params]);
            for (r, &t) in q.rho.iter_mut().zip(&theta[n_params..]) {
                *r = t.max(RHO_MIN);
            }
            if q.mu.iter().chain(&q.rho).any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("non-finite parameters in epoch {epoch}")));
            }
            total += elbo;
            batches += 1;
        }
        epoch_elbos.push(total / batches as f64);
    }
    Ok(MfviOutcome {
        posterior: q,
        epoch_elbos,
    })
}

/// Mean-field variational training of a network with Glorot-initialized
/// means (seeded by `cfg.seed`).
pub fn mfvi_train(sizes: &[usize], d: &Dataset, cfg: &MfviConfig) -> Result<MfviOutcome> {
    let model = NetworkLikelihood::new(sizes, d)?;
    let init = mlp_init(sizes, cfg.seed)?;
    mfvi_fit(&model, init.into_flat(), cfg)
}

/// The network whose parameters are the posterior means.
pub fn posterior_mean_network(q: &MeanFieldPosterior, sizes: &[usize]) -> Result<MLPParams> {
    MLPParams::from_flat(sizes, q.mu.clone())
}
