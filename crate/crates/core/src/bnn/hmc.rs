use serde::{Deserialize, Serialize};

use super::target::{GaussianPosterior, LogDensity, NetworkLikelihood};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{mlp_init, train, Optimizer, TrainConfig};
use crate::numerics::{dot, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HMCConfig {
    pub step_size: f64,
    pub trajectory_length: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub prior_precision: f64,
    /// Epochs of minibatch Adam on the log posterior used to start the chain.
    pub init_epochs: usize,
    pub seed: u64,
}

impl Default for HMCConfig {
    fn default() -> Self {
        Self {
            step_size: 0.0005,
            trajectory_length: 3,
            n_samples: 300,
            burn_in: 200,
            prior_precision: 5.0,
            init_epochs: 20,
            seed: 0,
        }
    }
}

impl HMCConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("step_size must be > 0".into()));
        }
        if self.trajectory_length == 0 || self.n_samples == 0 {
            return Err(Error::InvalidArgument(
                "trajectory_length and n_samples must be >= 1".into(),
            ));
        }
        if !(self.prior_precision > 0.0) {
            return Err(Error::InvalidArgument("prior_precision must be > 0".into()));
        }
        Ok(())
    }
}

/// Retained HMC states and the diagnostics of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub samples: Vec<Vec<f64>>,
    /// Metropolis decision of each retained iteration.
    pub accepted: Vec<bool>,
    pub accept_rate: f64,
    pub burn_in_accept_rate: f64,
    /// Hamiltonian at the start of every iteration, burn-in included.
    pub energies: Vec<f64>,
}

/// `L` leapfrog steps (half kick, drift, half kick) for `H = −log π(ω) + ½‖p‖²`.
/// `grad_log_density` returns `∇ log π`.
pub fn leapfrog(
    omega: &[f64],
    momentum: &[f64],
    mut grad_log_density: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    step_size: f64,
    n_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_steps == 0 || !(step_size > 0.0) {
        return Err(Error::InvalidArgument(
            "leapfrog needs step_size > 0 and at least one step".into(),
        ));
    }
    let g0 = grad_log_density(omega)?;
    let (w, p, _) = leapfrog_with_grad(
        omega,
        momentum,
        g0,
        |w| Ok(((), grad_log_density(w)?)),
        step_size,
        n_steps,
    )?;
    Ok((w, p))
}

type LeapfrogEnd<T> = (Vec<f64>, Vec<f64>, Option<(T, Vec<f64>)>);

// Leapfrog that reuses the gradient at the start and returns the value
// computed at the end point.
fn leapfrog_with_grad<T>(
    omega: &[f64],
    momentum: &[f64],
    grad0: Vec<f64>,
    mut eval: impl FnMut(&[f64]) -> Result<(T, Vec<f64>)>,
    step_size: f64,
    n_steps: usize,
) -> Result<LeapfrogEnd<T>> {
    let mut w = omega.to_vec();
    let mut p = momentum.to_vec();
    let mut g = grad0;
    let mut last = None;
    for (pi, gi) in p.iter_mut().zip(&g) {
        *pi += 0.5 * step_size * gi;
    }
    for step in 0..n_steps {
        for (wi, pi) in w.iter_mut().zip(&p) {
            *wi += step_size * pi;
        }
        let (value, grad) = eval(&w)?;
        g = grad;
        let kick = if step + 1 == n_steps {
            0.5 * step_size
        } else {
            step_size
        };
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += kick * gi;
        }
        last = Some((value, g.clone()));
    }
    if w.iter().chain(&p).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("leapfrog trajectory"));
    }
    Ok((w, p, last))
}

/// HMC with standard-normal momenta and a Metropolis correction, started
/// at `init`. Trajectories that leave the finite range are rejected.
pub fn hmc_run<T: LogDensity>(target: &T, init: Vec<f64>, cfg: &HMCConfig) -> Result<PosteriorChain> {
    cfg.validate()?;
    if init.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: init.len(),
        });
    }
    let mut rng = RngStream::new(cfg.seed);
    let mut omega = init;
    let (mut logp, mut grad) = target.log_density_and_grad(&omega)?;
    let mut momentum = vec![0.0; omega.len()];
    let total = cfg.burn_in + cfg.n_samples;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut accepted = Vec::with_capacity(cfg.n_samples);
    let mut energies = Vec::with_capacity(total);
    let mut burn_accepts = 0usize;

    for it in 0..total {
        rng.fill_standard_normal(&mut momentum);
        let h_old = -logp + 0.5 * dot(&momentum, &momentum);
        energies.push(h_old);
        let proposal = leapfrog_with_grad(
            &omega,
            &momentum,
            grad.clone(),
            |w| target.log_density_and_grad(w),
            cfg.step_size,
            cfg.trajectory_length,
        );
        let u = rng.uniform();
        let accept = match proposal {
            Ok((w, p, Some((lp, g)))) => {
                let h_new = -lp + 0.5 * dot(&p, &p);
                let ok = h_new.is_finite() && u < (h_old - h_new).exp();
                if ok {
                    omega = w;
                    logp = lp;
                    grad = g;
                }
                ok
            }
            Ok(_) => false,
            Err(Error::NonFinite(_)) => false,
            Err(e) => return Err(e),
        };
        if it < cfg.burn_in {
            burn_accepts += accept as usize;
            if it + 1 == cfg.burn_in && (burn_accepts as f64) < 0.01 * cfg.burn_in as f64 {
                return Err(Error::Divergence(format!(
                    "burn-in acceptance rate {:.4} below 0.01; reduce step_size",
                    burn_accepts as f64 / cfg.burn_in as f64
                )));
            }
        } else {
            samples.push(omega.clone());
            accepted.push(accept);
        }
    }
    let accept_rate = accepted.iter().filter(|&&a| a).count() as f64 / accepted.len() as f64;
    let burn_in_accept_rate = if cfg.burn_in > 0 {
        burn_accepts as f64 / cfg.burn_in as f64
    } else {
        f64::NAN
    };
    Ok(PosteriorChain {
        samples,
        accepted,
        accept_rate,
        burn_in_accept_rate,
        energies,
    })
}

/// Samples network weights under `N(0, precision⁻¹ I)` prior and full-batch
/// likelihood. The chain starts from a regularized minibatch fit.
pub fn hmc_sample(d: &Dataset, sizes: &[usize], cfg: &HMCConfig) -> Result<PosteriorChain> {
    cfg.validate()?;
    let target = GaussianPosterior {
        likelihood: NetworkLikelihood::new(sizes, d)?,
        prior_precision: cfg.prior_precision,
    };
    let mut init = mlp_init(sizes, cfg.seed)?;
    if cfg.init_epochs > 0 {
        let tc = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: cfg.init_epochs,
            dropout_rate: 0.0,
            weight_decay: cfg.prior_precision / d.len() as f64,
            seed: cfg.seed,
        };
        init = train(&init, d, &tc)?.params;
    }
    hmc_run(&target, init.into_flat(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::target::IsotropicGaussian;
    use crate::datasets::make_toy2d;

    fn quad_grad(w: &[f64]) -> Result<Vec<f64>> {
        Ok(w.iter().map(|v| -v).collect())
    }

    #[test]
    fn harmonic_oscillator_single_step() {
        // Exact flow of U = ½ω² is a rotation; leapfrog agrees to O(h³).
        for &h in &[0.1, 0.05, 0.025] {
            let (w, p) = leapfrog(&[1.0], &[0.0], quad_grad, h, 1).unwrap();
            let err = ((w[0] - h.cos()).powi(2) + (p[0] + h.sin()).powi(2)).sqrt();
            assert!(err < 0.3 * h * h * h, "h={h} err={err}");
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let mut rng = RngStream::new(1);
        let w0: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let p0: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let (w1, p1) = leapfrog(&w0, &p0, quad_grad, 0.1, 20).unwrap();
        let back: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (w2, p2) = leapfrog(&w1, &back, quad_grad, 0.1, 20).unwrap();
        for i in 0..5 {
            assert!((w2[i] - w0[i]).abs() < 1e-10);
            assert!((p2[i] + p0[i]).abs() < 1e-10);
        }
        assert!(leapfrog(&w0, &p0, quad_grad, 0.1, 0).is_err());
    }

    #[test]
    fn energy_error_scales_with_step_squared() {
        let energy = |w: &[f64], p: &[f64]| 0.5 * (dot(w, w) + dot(p, p));
        let w0 = [0.8, -0.3];
        let p0 = [0.2, 1.1];
        let dh = |h: f64| {
            let n = (1.0 / h).round() as usize;
            let (w, p) = leapfrog(&w0, &p0, quad_grad, h, n).unwrap();
            (energy(&w, &p) - energy(&w0, &p0)).abs()
        };
        let (a, b) = (dh(0.1), dh(0.05));
        assert!(a < 0.05 * 0.1 * 0.1 * 10.0);
        let ratio = a / b;
        assert!(ratio > 3.0 && ratio < 5.5, "ratio {ratio}");
    }

    #[test]
    fn standard_gaussian_moments() {
        let target = IsotropicGaussian { dim: 2, precision: 1.0 };
        let cfg = HMCConfig {
            step_size: 0.3,
            trajectory_length: 5,
            n_samples: 10_000,
            burn_in: 200,
            prior_precision: 1.0,
            init_epochs: 0,
            seed: 4,
        };
        let chain = hmc_run(&target, vec![0.0, 0.0], &cfg).unwrap();
        assert_eq!(chain.samples.len(), 10_000);
        for j in 0..2 {
            let xs: Vec<f64> = chain.samples.iter().map(|s| s[j]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 0.05, "mean {mean}");
            assert!((var - 1.0).abs() < 0.1, "var {var}");
        }
        let again = hmc_run(&target, vec![0.0, 0.0], &cfg).unwrap();
        assert_eq!(chain, again);
        let n_acc = chain.accepted.iter().filter(|&&a| a).count();
        assert_eq!(chain.accept_rate, n_acc as f64 / 10_000.0);
    }

    #[test]
    fn huge_steps_are_divergence() {
        let target = IsotropicGaussian { dim: 3, precision: 1.0 };
        let cfg = HMCConfig {
            step_size: 50.0,
            trajectory_length: 3,
            n_samples: 5,
            burn_in: 100,
            init_epochs: 0,
            ..HMCConfig::default()
        };
        assert!(matches!(
            hmc_run(&target, vec![1.0; 3], &cfg),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn small_steps_accept_on_toy_posterior() {
        let d = make_toy2d(50, 2).unwrap();
        let cfg = HMCConfig {
            step_size: 0.0001,
            n_samples: 30,
            burn_in: 10,
            init_epochs: 5,
            seed: 1,
            ..HMCConfig::default()
        };
        let chain = hmc_sample(&d, &[2, 32, 2], &cfg).unwrap();
        assert!(chain.accept_rate >= 0.9, "{}", chain.accept_rate);
    }
}
