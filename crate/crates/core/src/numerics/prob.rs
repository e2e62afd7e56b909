//! Class-probability vectors, softmax and predictive entropy.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Normalized class-probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty probability vector".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "probabilities outside [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    /// `[1 - p, p]` for a binary problem.
    pub fn binary(p_class1: f64) -> Self {
        let p = p_class1.clamp(0.0, 1.0);
        Self(vec![1.0 - p, p])
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    /// Arithmetic mean of equally weighted distributions over the same classes.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a ProbVector>) -> Result<Self> {
        let mut acc: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for p in items {
            if acc.is_empty() {
                acc = vec![0.0; p.len()];
            } else if acc.len() != p.len() {
                return Err(Error::DimensionMismatch {
                    expected: acc.len(),
                    got: p.len(),
                });
            }
            for (a, v) in acc.iter_mut().zip(p.as_slice()) {
                *a += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidArgument("mean of no distributions".into()));
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Ok(Self::renormalized(acc))
    }

    /// Wraps accumulated nonnegative weights, dividing out rounding drift.
    pub(crate) fn renormalized(mut v: Vec<f64>) -> Self {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x = (*x / s).clamp(0.0, 1.0));
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

/// Predictive entropy −Σ p log p in nats, with 0·log 0 = 0.
pub fn entropy(p: &ProbVector) -> f64 {
    let h: f64 = p.as_slice().iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
    h.clamp(0.0, (p.len() as f64).ln())
}

/// Entropy of `[1 - p, p]` in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    (term(p) + term(1.0 - p)).clamp(0.0, LN_2)
}

/// Numerically safe softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> ProbVector {
    assert!(!logits.is_empty(), "softmax of empty logits");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    ProbVector::renormalized(exps)
}

/// log-softmax, stable for large logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    // ln Σ e^{z−max} = ln1p(Σ_{i≠argmax} e^{z_i−max}) keeps tiny tails exact.
    let arg = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let max = logits[arg];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &z)| (z - max).exp())
        .sum();
    let log_norm = rest.ln_1p();
    logits.iter().map(|&z| (z - max) - log_norm).collect()
}
