//! Binary Gaussian-process classification with the Laplace approximation.
//!
//! The mode of the latent posterior is found with the Newton iteration on
//! `Ψ(f) = log p(y|f) − ½ fᵀK⁻¹f`, carried out through the well-conditioned
//! matrix `B = I + W^½ K W^½` so that `K` itself is never inverted. Predictions
//! use the Gaussian approximation of the latent at a test point:
//!
//! * mean `k⋆ᵀ ∇log p(y|f̂)`
//! * variance `k(x⋆, x⋆) − k⋆ᵀ (K + W⁻¹)⁻¹ k⋆`, computed as `k⋆⋆ − ‖L⁻¹ W^½ k⋆‖²`
//!
//! When a test point is unrelated to every training point (`k⋆ → 0`) the mean
//! goes to zero, the variance to the prior variance, and the class probability
//! to ½.

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{
    cholesky_or_jitter, dot, entropy, forward_substitute, log_sigmoid, log_std_normal_cdf, normal_hazard, sigmoid,
    solve_lower_transposed, std_normal_cdf, DenseMatrix, GaussHermite, ProbVector,
};

/// Quadrature order for the logistic-link predictive integral.
pub const LOGISTIC_QUADRATURE_NODES: usize = 50;
const MAX_LINE_SEARCH_HALVINGS: usize = 30;
const VARIANCE_NEGATIVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub length_scale: f64,
    pub signal_variance: f64,
}

impl KernelParams {
    pub fn new(length_scale: f64, signal_variance: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(length_scale) || !ok(signal_variance) {
            return Err(Error::InvalidArgument(format!(
                "kernel parameters must be finite and positive, got ({length_scale}, {signal_variance})"
            )));
        }
        Ok(Self {
            length_scale,
            signal_variance,
        })
    }

    /// Unit signal variance with the given length scale.
    pub fn with_length_scale(length_scale: f64) -> Result<Self> {
        Self::new(length_scale, 1.0)
    }
}

/// Log-spaced length scales `2^lo ..= 2^hi`, unit signal variance.
pub fn length_scale_grid(lo: i32, hi: i32) -> Vec<KernelParams> {
    (lo..=hi)
        .map(|k| KernelParams {
            length_scale: 2f64.powi(k),
            signal_variance: 1.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// Gaussian CDF.
    #[default]
    Probit,
    /// Logistic sigmoid.
    Logistic,
}

impl Link {
    /// Per-point log-likelihood, its gradient in f, and the negative Hessian.
    fn terms(self, y: f64, f: f64) -> (f64, f64, f64) {
        match self {
            Link::Probit => {
                let z = y * f;
                let h = normal_hazard(z);
                (log_std_normal_cdf(z), y * h, h * (h + z))
            }
            Link::Logistic => {
                let p = sigmoid(f);
                let t = 0.5 * (y + 1.0);
                (log_sigmoid(y * f), t - p, p * (1.0 - p))
            }
        }
    }
}

/// Squared-exponential kernel.
#[inline]
pub fn rbf(x: &[f64], x2: &[f64], p: &KernelParams) -> f64 {
    debug_assert_eq!(x.len(), x2.len());
    let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    p.signal_variance * (-d2 / (2.0 * p.length_scale * p.length_scale)).exp()
}

/// Kernel matrix between the columns of `a` and the columns of `b`.
pub fn kernel_matrix(a: &DenseMatrix, b: &DenseMatrix, p: &KernelParams) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.rows(),
        });
    }
    if std::ptr::eq(a, b) {
        let n = a.cols();
        let mut k = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = rbf(a.col(i), a.col(j), p);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        return Ok(k);
    }
    Ok(DenseMatrix::from_fn(a.cols(), b.cols(), |i, j| {
        rbf(a.col(i), b.col(j), p)
    }))
}

/// `k⋆`: kernel between every column of `train` and `x`.
pub fn kernel_vector(train: &DenseMatrix, x: &[f64], p: &KernelParams) -> Result<Vec<f64>> {
    if train.rows() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: train.rows(),
            got: x.len(),
        });
    }
    Ok((0..train.cols()).map(|i| rbf(train.col(i), x, p)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceOptions {
    pub link: Link,
    /// Convergence threshold on ‖Δf‖∞.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            link: Link::Probit,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// A fitted Laplace GP classifier.
#[derive(Debug, Clone)]
pub struct LaplaceGPState {
    x: DenseMatrix,
    y: Vec<f64>,
    params: KernelParams,
    link: Link,
    f_hat: Vec<f64>,
    grad: Vec<f64>,
    w: Vec<f64>,
    sqrt_w: Vec<f64>,
    chol_b: DenseMatrix,
    log_marginal: f64,
    iterations: usize,
    objective_trace: Vec<f64>,
}

impl LaplaceGPState {
    pub fn inputs(&self) -> &DenseMatrix {
        &self.x
    }
    /// Labels recoded to ±1.
    pub fn signed_labels(&self) -> &[f64] {
        &self.y
    }
    pub fn params(&self) -> KernelParams {
        self.params
    }
    pub fn link(&self) -> Link {
        self.link
    }
    pub fn mode(&self) -> &[f64] {
        &self.f_hat
    }
    /// ∇log p(y|f̂).
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
    /// Diagonal of −∇∇log p(y|f̂).
    pub fn w(&self) -> &[f64] {
        &self.w
    }
    pub fn chol_b(&self) -> &DenseMatrix {
        &self.chol_b
    }
    /// Laplace approximation of the log marginal likelihood.
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    /// `log p(y|f) − ½ fᵀK⁻¹f` after every accepted Newton step, starting at f = 0.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// ‖f̂ − K·∇log p(y|f̂)‖∞, zero at an exact mode.
    pub fn mode_residual(&self) -> Result<f64> {
        let k = kernel_matrix(&self.x, &self.x, &self.params)?;
        let kg = k.matvec(&self.grad)?;
        Ok(self
            .f_hat
            .iter()
            .zip(&kg)
            .map(|(f, v)| (f - v).abs())
            .fold(0.0, f64::max))
    }

    /// Rebuilds a state from a stored mode (see [`crate::container`]).
    pub fn from_mode(
        x: DenseMatrix,
        labels: &[usize],
        params: KernelParams,
        link: Link,
        f_hat: Vec<f64>,
    ) -> Result<Self> {
        let y = signed_labels(labels)?;
        if x.cols() != y.len() || f_hat.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.cols(),
                got: f_hat.len(),
            });
        }
        let k = kernel_matrix(&x, &x, &params)?;
        let eval = evaluate_at(&k, &y, link, &f_hat)?;
        let a = eval.grad.clone();
        let log_marginal = log_marginal(&a, &f_hat, eval.log_lik, &eval.chol_b);
        Ok(Self {
            x,
            y,
            params,
            link,
            f_hat,
            grad: eval.grad,
            w: eval.w,
            sqrt_w: eval.sqrt_w,
            chol_b: eval.chol_b,
            log_marginal,
            iterations: 0,
            objective_trace: vec![],
        })
    }
}

fn signed_labels(labels: &[usize]) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|&l| match l {
            0 => Ok(-1.0),
            1 => Ok(1.0),
            other => Err(Error::InvalidArgument(format!("label {other} is not binary"))),
        })
        .collect()
}

struct Evaluation {
    log_lik: f64,
    grad: Vec<f64>,
    w: Vec<f64>,
    sqrt_w: Vec<f64>,
    chol_b: DenseMatrix,
}

fn likelihood_terms(y: &[f64], link: Link, f: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut log_lik = 0.0;
    let mut grad = Vec::with_capacity(f.len());
    let mut w = Vec::with_capacity(f.len());
    for (&yi, &fi) in y.iter().zip(f) {
        let (l, g, h) = link.terms(yi, fi);
        log_lik += l;
        grad.push(g);
        w.push(h.max(0.0));
    }
    (log_lik, grad, w)
}

fn evaluate_at(k: &DenseMatrix, y: &[f64], link: Link, f: &[f64]) -> Result<Evaluation> {
    let (log_lik, grad, w) = likelihood_terms(y, link, f);
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let n = y.len();
    let b = DenseMatrix::from_fn(n, n, |i, j| {
        let v = sqrt_w[i] * k[(i, j)] * sqrt_w[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    });
    let (chol_b, _) = cholesky_or_jitter(&b)?;
    Ok(Evaluation {
        log_lik,
        grad,
        w,
        sqrt_w,
        chol_b,
    })
}

fn log_marginal(a: &[f64], f: &[f64], log_lik: f64, chol_b: &DenseMatrix) -> f64 {
    let log_det_half: f64 = chol_b.diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * dot(a, f) + log_lik - log_det_half
}

fn objective(y: &[f64], link: Link, a: &[f64], f: &[f64]) -> f64 {
    let log_lik: f64 = y.iter().zip(f).map(|(&yi, &fi)| link.terms(yi, fi).0).sum();
    -0.5 * dot(a, f) + log_lik
}

/// Finds the posterior mode for the given kernel parameters.
pub fn laplace_fit(d: &Dataset, params: KernelParams, opts: LaplaceOptions) -> Result<LaplaceGPState> {
    let y = signed_labels(d.labels())?;
    let x = d.features().clone();
    let k = kernel_matrix(&x, &x, &params)?;
    let n = y.len();

    let mut a = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut psi = objective(&y, opts.link, &a, &f);
    let mut trace = vec![psi];
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let eval = evaluate_at(&k, &y, opts.link, &f)?;
        // Newton direction in the `a = K⁻¹f` parameterization.
        let b: Vec<f64> = (0..n).map(|i| eval.w[i] * f[i] + eval.grad[i]).collect();
        let kb = k.matvec(&b)?;
        let mut c: Vec<f64> = (0..n).map(|i| eval.sqrt_w[i] * kb[i]).collect();
        forward_substitute(&eval.chol_b, &mut c)?;
        let s = solve_lower_transposed(&eval.chol_b, &c)?;
        let a_newton: Vec<f64> = (0..n).map(|i| b[i] - eval.sqrt_w[i] * s[i]).collect();

        if converged {
            // Full step without line search: the objective change is below
            // rounding at this point.
            f = k.matvec(&a_newton)?;
            a = a_newton;
            psi = objective(&y, opts.link, &a, &f);
            trace.push(psi);
            break;
        }
        let direction: Vec<f64> = a_newton.iter().zip(&a).map(|(an, ao)| an - ao).collect();
        let k_dir = k.matvec(&direction)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_LINE_SEARCH_HALVINGS {
            let a_try: Vec<f64> = a.iter().zip(&direction).map(|(ao, d)| ao + step * d).collect();
            let f_try: Vec<f64> = f.iter().zip(&k_dir).map(|(fo, d)| fo + step * d).collect();
            let psi_try = objective(&y, opts.link, &a_try, &f_try);
            if psi_try.is_finite() && psi_try >= psi {
                accepted = Some((a_try, f_try, psi_try));
                break;
            }
            step *= 0.5;
        }
        let Some((a_new, f_new, psi_new)) = accepted else {
            // No ascent possible along the Newton direction: at the mode to
            // working precision.
            converged = true;
            continue;
        };
        last_step = f_new.iter().zip(&f).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        a = a_new;
        f = f_new;
        psi = psi_new;
        trace.push(psi);
        // One extra Newton step once under tolerance brings the stationarity
        // residual down to rounding level.
        converged = last_step < opts.tol;
    }

    let eval = evaluate_at(&k, &y, opts.link, &f)?;
    let log_marginal = log_marginal(&a, &f, eval.log_lik, &eval.chol_b);
    if !log_marginal.is_finite() {
        return Err(Error::NonFinite("Laplace log marginal likelihood"));
    }
    let state = LaplaceGPState {
        x,
        y,
        params,
        link: opts.link,
        f_hat: f,
        grad: eval.grad,
        w: eval.w,
        sqrt_w: eval.sqrt_w,
        chol_b: eval.chol_b,
        log_marginal,
        iterations,
        objective_trace: trace,
    };
    if converged {
        Ok(state)
    } else {
        Err(Error::NoConvergence {
            iterations,
            last_step,
            last: Box::new(state),
        })
    }
}

/// Fits every grid point and keeps the one with the largest Laplace log
/// marginal likelihood; ties go to the earliest grid entry.
pub fn fit_hyperparams(
    d: &Dataset,
    grid: &[KernelParams],
    opts: LaplaceOptions,
) -> Result<(KernelParams, LaplaceGPState)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    let mut best: Option<LaplaceGPState> = None;
    let mut last_err = None;
    for &p in grid {
        match laplace_fit(d, p, opts) {
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.log_marginal() > b.log_marginal()) {
                    best = Some(s);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(s) => Ok((s.params(), s)),
        None => Err(last_err.expect("grid nonempty")),
    }
}

/// Mean and variance of the approximate latent posterior at `x`.
pub fn predict_latent(s: &LaplaceGPState, x: &[f64]) -> Result<(f64, f64)> {
    let k_star = kernel_vector(&s.x, x, &s.params)?;
    latent_from_kernel_vector(s, &k_star, rbf(x, x, &s.params))
}

pub(crate) fn latent_from_kernel_vector(s: &LaplaceGPState, k_star: &[f64], k_self: f64) -> Result<(f64, f64)> {
    let mean = dot(k_star, &s.grad);
    let mut v: Vec<f64> = k_star.iter().zip(&s.sqrt_w).map(|(k, w)| k * w).collect();
    forward_substitute(&s.chol_b, &mut v)?;
    let mut var = k_self - dot(&v, &v);
    if var < 0.0 {
        if var < -VARIANCE_NEGATIVE_TOL {
            return Err(Error::Numerical(format!("negative predictive variance {var:e}")));
        }
        var = 0.0;
    }
    Ok((mean, var))
}

/// `∫ σ(f) N(f | mean, var) df` for the given link.
pub fn link_integral(link: Link, mean: f64, var: f64) -> f64 {
    match link {
        Link::Probit => std_normal_cdf(mean / (1.0 + var).sqrt()),
        Link::Logistic => {
            thread_local! {
                static RULE: GaussHermite =
                    GaussHermite::new(LOGISTIC_QUADRATURE_NODES).expect("valid order");
            }
            if var <= 2.0 {
                RULE.with(|r| r.expectation(mean, var, sigmoid))
            } else {
                wide_logistic_integral(mean, var)
            }
        }
    }
}

// Trapezoid over ±10 sd. Converges geometrically for analytic integrands,
// unlike Gauss-Hermite once the density is wide relative to the sigmoid.
fn wide_logistic_integral(mean: f64, var: f64) -> f64 {
    const STEP: f64 = 0.2;
    let sd = var.sqrt();
    let n = (20.0 * sd / STEP).ceil() as usize;
    let h = 20.0 * sd / n as f64;
    let norm = h / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let lo = mean - 10.0 * sd;
    let sum: f64 = (0..=n)
        .map(|i| {
            let f = lo + i as f64 * h;
            let z = (f - mean) / sd;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * (-0.5 * z * z).exp() * sigmoid(f)
        })
        .sum();
    sum * norm
}

/// Predictive class distribution `[1 − π̄⋆, π̄⋆]`.
pub fn predict_proba(s: &LaplaceGPState, x: &[f64]) -> Result<ProbVector> {
    let (mean, var) = predict_latent(s, x)?;
    Ok(ProbVector::binary(link_integral(s.link, mean, var)))
}

/// Predictive entropy in nats.
pub fn gp_entropy(s: &LaplaceGPState, x: &[f64]) -> Result<f64> {
    Ok(entropy(&predict_proba(s, x)?))
}
