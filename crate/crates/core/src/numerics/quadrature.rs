//! Gauss–Hermite quadrature for expectations under a Gaussian.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights for `∫ f(x) e^{-x²} dx ≈ Σ wᵢ f(xᵢ)`, nodes ascending.
///
/// Roots of the physicists' Hermite polynomial are found by Newton's method
/// on the orthonormal recurrence, starting from the usual asymptotic guesses.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=100).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "Gauss-Hermite order must be in 1..=100, got {n}"
        )));
    }
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let (p1, deriv) = orthonormal_hermite(n, z, pim4);
            pp = deriv;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!(
                "Gauss-Hermite root {i} of order {n} did not converge"
            )));
        }
        let (_, deriv) = orthonormal_hermite(n, z, pim4);
        pp = if deriv.is_finite() { deriv } else { pp };
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    x.reverse();
    w.reverse();
    Ok((x, w))
}

// Value and derivative of the normalized Hermite polynomial of degree n at z.
fn orthonormal_hermite(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = (j + 1) as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Precomputed rule for `E[f(Z)]`, `Z ~ N(mean, var)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        let (nodes, weights) = gauss_hermite(n)?;
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn expectation(&self, mean: f64, var: f64, f: impl Fn(f64) -> f64) -> f64 {
        let scale = (2.0 * var.max(0.0)).sqrt();
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum();
        s / PI.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_one_and_two() {
        let (x, w) = gauss_hermite(1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - PI.sqrt()).abs() < 1e-14);

        // Roots of H2(x) = 4x² - 2.
        let (x, w) = gauss_hermite(2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((x[0] + r).abs() < 1e-14 && (x[1] - r).abs() < 1e-14);
        for wi in w {
            assert!((wi - PI.sqrt() / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn weights_sum_and_symmetry() {
        for n in 1..=100 {
            let (x, w) = gauss_hermite(n).unwrap();
            let s: f64 = w.iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-10, "n={n} sum={s}");
            for i in 0..n {
                assert!((x[i] + x[n - 1 - i]).abs() < 1e-12, "n={n}");
                assert!(w[i] > 0.0);
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn gaussian_second_moment() {
        let gh = GaussHermite::new(10).unwrap();
        assert!((gh.expectation(0.0, 1.0, |z| z * z) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        // E[Z^k] for Z ~ N(0,1): (k-1)!! for even k, 0 for odd.
        fn moment(k: u32) -> f64 {
            if k % 2 == 1 {
                0.0
            } else {
                (1..k).step_by(2).map(|v| v as f64).product()
            }
        }
        for n in [1usize, 2, 3, 5, 8, 12] {
            let gh = GaussHermite::new(n).unwrap();
            for k in 0..(2 * n as u32) {
                let got = gh.expectation(0.0, 1.0, |z| z.powi(k as i32));
                let want = moment(k);
                // Odd moments vanish by cancellation; compare against the
                // magnitude of the neighbouring even moment.
                let scale = moment(k + (k % 2)).max(1.0);
                assert!((got - want).abs() < 1e-9 * scale, "n={n} k={k} got={got} want={want}");
            }
        }
    }

    #[test]
    fn rejects_out_of_range_order() {
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_hermite(101).is_err());
    }
}
