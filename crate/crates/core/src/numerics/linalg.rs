//! Cholesky factorization and triangular solves.

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// Which triangle of the matrix holds the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

/// Lower Cholesky factor `L` with `L·Lᵀ = A`.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::InvalidArgument("cholesky needs a symmetric matrix".into()));
    }
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    // Column-oriented (left-looking) so that inner loops run down contiguous columns.
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            let ljk = l[(j, k)];
            d -= ljk * ljk;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;

        let mut col: Vec<f64> = a.col(j)[j + 1..].to_vec();
        for k in 0..j {
            let ljk = l[(j, k)];
            if ljk == 0.0 {
                continue;
            }
            let lk = &l.col(k)[j + 1..];
            for (c, &v) in col.iter_mut().zip(lk) {
                *c -= v * ljk;
            }
        }
        let out = &mut l.col_mut(j)[j + 1..];
        for (o, c) in out.iter_mut().zip(col) {
            *o = c / djj;
        }
    }
    Ok(l)
}

/// Diagonal jitter escalation for nearly singular kernel matrices.
#[derive(Debug, Clone, Copy)]
pub struct JitterPolicy {
    /// First jitter, relative to the mean diagonal.
    pub initial: f64,
    /// Largest relative jitter tried before giving up.
    pub max: f64,
    pub factor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-9,
            max: 1e-4,
            factor: 10.0,
        }
    }
}

/// Cholesky of `A + jitter·I`, escalating the jitter until the factorization
/// succeeds. Returns the factor and the absolute jitter that was added.
pub fn cholesky_jittered(a: &DenseMatrix, policy: JitterPolicy) -> Result<(DenseMatrix, f64)> {
    let scale = a.mean_diagonal().abs().max(f64::MIN_POSITIVE);
    let mut rel = policy.initial;
    let mut last_err = None;
    while rel <= policy.max * (1.0 + 1e-12) {
        let mut shifted = a.clone();
        let jitter = rel * scale;
        shifted.add_diagonal(jitter);
        match cholesky(&shifted) {
            Ok(l) => return Ok((l, jitter)),
            Err(e @ Error::NotPositiveDefinite { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
        rel *= policy.factor;
    }
    Err(last_err.unwrap_or(Error::NotPositiveDefinite {
        index: 0,
        pivot: f64::NAN,
    }))
}

/// Tries a plain factorization first and falls back to [`cholesky_jittered`].
pub fn cholesky_or_jitter(a: &DenseMatrix) -> Result<(DenseMatrix, f64)> {
    match cholesky(a) {
        Ok(l) => Ok((l, 0.0)),
        Err(Error::NotPositiveDefinite { .. }) => cholesky_jittered(a, JitterPolicy::default()),
        Err(e) => Err(e),
    }
}

/// Solves `T·x = b` for triangular `T`.
pub fn solve_triangular(t: &DenseMatrix, b: &[f64], side: Triangle) -> Result<Vec<f64>> {
    check_triangular_system(t, b)?;
    let mut x = b.to_vec();
    match side {
        Triangle::Lower => forward_substitute(t, &mut x)?,
        Triangle::Upper => back_substitute(t, &mut x)?,
    }
    Ok(x)
}

/// Solves `Lᵀ·x = b` given lower-triangular `L`, without forming the transpose.
pub fn solve_lower_transposed(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_triangular_system(l, b)?;
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let col = l.col(i);
        let d = col[i];
        if d == 0.0 {
            return Err(Error::SingularMatrix(i));
        }
        let s: f64 = col[i + 1..].iter().zip(&x[i + 1..]).map(|(a, v)| a * v).sum();
        x[i] = (x[i] - s) / d;
    }
    Ok(x)
}

/// In-place forward substitution with lower-triangular `l`.
pub(crate) fn forward_substitute(l: &DenseMatrix, x: &mut [f64]) -> Result<()> {
    let n = l.rows();
    for j in 0..n {
        let col = l.col(j);
        let d = col[j];
        if d == 0.0 {
            return Err(Error::SingularMatrix(j));
        }
        x[j] /= d;
        let xj = x[j];
        if xj != 0.0 {
            for (xi, &a) in x[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *xi -= a * xj;
            }
        }
    }
    Ok(())
}

fn back_substitute(u: &DenseMatrix, x: &mut [f64]) -> Result<()> {
    let n = u.rows();
    for j in (0..n).rev() {
        let col = u.col(j);
        let d = col[j];
        if d == 0.0 {
            return Err(Error::SingularMatrix(j));
        }
        x[j] /= d;
        let xj = x[j];
        if xj != 0.0 {
            for (xi, &a) in x[..j].iter_mut().zip(&col[..j]) {
                *xi -= a * xj;
            }
        }
    }
    Ok(())
}

fn check_triangular_system(t: &DenseMatrix, b: &[f64]) -> Result<()> {
    if !t.is_square() {
        return Err(Error::InvalidArgument("triangular solve needs a square matrix".into()));
    }
    if b.len() != t.rows() {
        return Err(Error::DimensionMismatch {
            expected: t.rows(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Solves `A·x = b` given the lower Cholesky factor of `A`.
pub fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let y = solve_triangular(l, b, Triangle::Lower)?;
    solve_lower_transposed(l, &y)
}

/// Inverse of an SPD matrix through its Cholesky factor. Only used by
/// reference computations in tests and diagnostics.
pub fn spd_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (l, _) = cholesky_or_jitter(a)?;
    let n = a.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let x = cholesky_solve(&l, &e)?;
        inv.col_mut(j).copy_from_slice(&x);
    }
    Ok(inv)
}
