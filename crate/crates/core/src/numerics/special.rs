//! Scalar special functions: Gaussian CDF and friends, logistic helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TAIL_CUTOFF: f64 = -30.0;

/// Standard normal CDF Φ(z).
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

// Asymptotic series Φ(z)·(-z)/φ(z) for z → -∞.
fn mills_series(z: f64) -> f64 {
    let r = 1.0 / (z * z);
    1.0 - r + 3.0 * r * r - 15.0 * r * r * r + 105.0 * r * r * r * r
}

/// ln Φ(z), accurate deep into the lower tail.
pub fn log_std_normal_cdf(z: f64) -> f64 {
    if z < TAIL_CUTOFF {
        -0.5 * z * z - LN_SQRT_2PI - (-z).ln() + mills_series(z).ln()
    } else if z > 5.0 {
        // Φ(z) = 1 - Φ(-z); ln1p keeps the tiny complement.
        (-std_normal_cdf(-z)).ln_1p()
    } else {
        std_normal_cdf(z).ln()
    }
}

/// φ(z)/Φ(z), the derivative of ln Φ(z).
pub fn normal_hazard(z: f64) -> f64 {
    if z < TAIL_CUTOFF {
        -z / mills_series(z)
    } else {
        (-0.5 * z * z - LN_SQRT_2PI - log_std_normal_cdf(z)).exp()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln σ(x) = -softplus(-x).
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Gaussian density N(x | mean, var).
#[inline]
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * PI * var).sqrt()
}
