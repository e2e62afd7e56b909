use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{backward_sum, forward_batch, relu_pattern, GradCheckReport, MLPParams};
use crate::numerics::{dot, RngStream};

const CHUNK: usize = 512;

/// A differentiable unnormalized log density over a flat parameter vector.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, omega: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// A likelihood that factorizes over data points, evaluated on index subsets.
pub trait BatchLikelihood {
    fn n_params(&self) -> usize;
    fn n_data(&self) -> usize;
    /// `Σ_{i ∈ batch} log p(yᵢ | xᵢ, ω)` and its gradient in `ω`.
    fn log_lik_and_grad(&self, omega: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)>;
}

/// Categorical likelihood of a ReLU network on a labeled dataset.
#[derive(Debug, Clone)]
pub struct NetworkLikelihood<'a> {
    sizes: Vec<usize>,
    data: &'a Dataset,
}

impl<'a> NetworkLikelihood<'a> {
    pub fn new(sizes: &[usize], data: &'a Dataset) -> Result<Self> {
        if sizes.first() != Some(&data.dim()) {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: sizes.first().copied().unwrap_or(0),
            });
        }
        MLPParams::zeros(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            data,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Log-likelihood of the whole dataset.
    pub fn full_log_lik_and_grad(&self, omega: &[f64]) -> Result<(f64, Vec<f64>)> {
        let all: Vec<usize> = (0..self.data.len()).collect();
        self.log_lik_and_grad(omega, &all)
    }
}

impl BatchLikelihood for NetworkLikelihood<'_> {
    fn n_params(&self) -> usize {
        crate::nnet::param_count(&self.sizes)
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn log_lik_and_grad(&self, omega: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let p = MLPParams::from_flat(&self.sizes, omega.to_vec())?;
        let mut total = 0.0;
        let mut grad = vec![0.0; omega.len()];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for chunk in batch.chunks(CHUNK) {
            xs.clear();
            ys.clear();
            for &i in chunk {
                xs.extend_from_slice(self.data.feature(i));
                ys.push(self.data.label(i));
            }
            let cache = forward_batch(&p, &xs, chunk.len(), None)?;
            let (ce, g) = backward_sum(&p, &cache, &ys, None)?;
            total -= ce;
            for (a, b) in grad.iter_mut().zip(g.as_slice()) {
                *a -= b;
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("log-likelihood"));
        }
        Ok((total, grad))
    }
}

/// Likelihood plus an isotropic zero-mean Gaussian prior:
/// `log p(D|ω) − (precision/2)‖ω‖²`.
#[derive(Debug, Clone)]
pub struct GaussianPosterior<L> {
    pub likelihood: L,
    pub prior_precision: f64,
}

impl<L: BatchLikelihood> LogDensity for GaussianPosterior<L> {
    fn dim(&self) -> usize {
        self.likelihood.n_params()
    }

    fn log_density_and_grad(&self, omega: &[f64]) -> Result<(f64, Vec<f64>)> {
        let all: Vec<usize> = (0..self.likelihood.n_data()).collect();
        let (ll, mut g) = self.likelihood.log_lik_and_grad(omega, &all)?;
        let lp = -0.5 * self.prior_precision * dot(omega, omega);
        for (gi, w) in g.iter_mut().zip(omega) {
            *gi -= self.prior_precision * w;
        }
        let total = ll + lp;
        if !total.is_finite() {
            return Err(Error::NonFinite("log posterior"));
        }
        Ok((total, g))
    }
}

/// Zero-mean isotropic Gaussian `N(0, precision⁻¹ I)` with no data.
#[derive(Debug, Clone, Copy)]
pub struct IsotropicGaussian {
    pub dim: usize,
    pub precision: f64,
}

impl LogDensity for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, omega: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lp = -0.5 * self.precision * dot(omega, omega);
        Ok((lp, omega.iter().map(|w| -self.precision * w).collect()))
    }
}

/// Unnormalized network log posterior `log p(D|ω) − (precision/2)‖ω‖²` and
/// its gradient.
pub fn log_posterior_and_grad(omega: &MLPParams, d: &Dataset, prior_precision: f64) -> Result<(f64, Vec<f64>)> {
    let target = GaussianPosterior {
        likelihood: NetworkLikelihood::new(omega.sizes(), d)?,
        prior_precision,
    };
    target.log_density_and_grad(omega.as_slice())
}

/// Compares [`log_posterior_and_grad`] against central differences on
/// `n_coords` random coordinates, skipping those where a ReLU on any
/// training input changes state inside ±ε.
pub fn log_posterior_gradient_check(
    p: &MLPParams,
    d: &Dataset,
    prior_precision: f64,
    n_coords: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grad) = log_posterior_and_grad(p, d, prior_precision)?;
    let mut rng = RngStream::new(seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let likelihood = NetworkLikelihood::new(p.sizes(), d)?;
    let xs = d.features().as_slice();
    let mut probe = p.clone();
    for _ in 0..n_coords {
        let k = rng.below(p.len());
        let orig = p.as_slice()[k];
        probe.as_mut_slice()[k] = orig + eps;
        let pattern_hi = relu_pattern(&probe, xs, d.len(), None)?;
        let (hi, _) = likelihood.full_log_lik_and_grad(probe.as_slice())?;
        probe.as_mut_slice()[k] = orig - eps;
        let pattern_lo = relu_pattern(&probe, xs, d.len(), None)?;
        let (lo, _) = likelihood.full_log_lik_and_grad(probe.as_slice())?;
        probe.as_mut_slice()[k] = orig;
        if pattern_hi != pattern_lo {
            report.skipped += 1;
            continue;
        }
        // The prior differs only in coordinate k, so its difference is exact;
        // differencing the full sum over all weights loses digits.
        let numeric = (hi - lo) / (2.0 * eps) - prior_precision * orig;
        let rel = (grad[k] - numeric).abs() / (grad[k].abs() + numeric.abs()).max(1e-8);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
