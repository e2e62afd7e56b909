use rayon::prelude::*;

use super::hmc::PosteriorChain;
use super::mfvi::MeanFieldPosterior;
use crate::error::{Error, Result};
use crate::nnet::{forward_batch, MLPParams};
use crate::numerics::{softmax, ProbVector, RngStream};

const CHUNK: usize = 256;

/// Mean of `softmax(f(x; ω))` over the given networks.
pub fn posterior_predict(samples: &[MLPParams], x: &[f64]) -> Result<ProbVector> {
    let dim = samples
        .first()
        .map(|s| s.input_dim())
        .ok_or_else(|| Error::InvalidArgument("posterior_predict needs at least one sample".into()))?;
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let mut acc = Accumulator::new(samples[0].output_dim(), x.len(), dim);
    for s in samples {
        acc.add(s, x)?;
    }
    Ok(acc.finish().remove(0))
}

// Running sum of softmax outputs over networks for a fixed probe set.
struct Accumulator {
    classes: usize,
    dim: usize,
    sums: Vec<f64>,
    count: usize,
}

impl Accumulator {
    fn new(classes: usize, n_values: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            sums: vec![0.0; n_values / dim * classes],
            count: 0,
        }
    }

    fn add(&mut self, net: &MLPParams, xs: &[f64]) -> Result<()> {
        let (dim, classes) = (self.dim, self.classes);
        self.sums
            .par_chunks_mut(CHUNK * classes)
            .zip(xs.par_chunks(CHUNK * dim))
            .try_for_each(|(sums, chunk)| -> Result<()> {
                let batch = chunk.len() / dim;
                let cache = forward_batch(net, chunk, batch, None)?;
                for i in 0..batch {
                    let p = softmax(cache.logits(i));
                    for (s, v) in sums[i * classes..(i + 1) * classes].iter_mut().zip(p.as_slice()) {
                        *s += v;
                    }
                }
                Ok(())
            })?;
        self.count += 1;
        Ok(())
    }

    fn finish(self) -> Vec<ProbVector> {
        let inv = 1.0 / self.count as f64;
        self.sums
            .chunks(self.classes)
            .map(|c| ProbVector::renormalized(c.iter().map(|s| s * inv).collect()))
            .collect()
    }
}

fn check_probes(sizes: &[usize], xs: &[f64]) -> Result<()> {
    if sizes.is_empty() || !xs.len().is_multiple_of(sizes[0]) {
        return Err(Error::DimensionMismatch {
            expected: sizes.first().copied().unwrap_or(0),
            got: xs.len(),
        });
    }
    Ok(())
}

impl PosteriorChain {
    /// Posterior-averaged predictions for probes stored column-major in `xs`.
    pub fn predict_batch(&self, sizes: &[usize], xs: &[f64]) -> Result<Vec<ProbVector>> {
        check_probes(sizes, xs)?;
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("empty chain".into()));
        }
        let mut acc = Accumulator::new(*sizes.last().unwrap(), xs.len(), sizes[0]);
        for s in &self.samples {
            acc.add(&MLPParams::from_flat(sizes, s.clone())?, xs)?;
        }
        Ok(acc.finish())
    }
}

impl MeanFieldPosterior {
    /// Predictions averaged over `n_draws` draws from q; draw `k` uses
    /// `RngStream::new(seed).substream(k)`.
    pub fn predict_batch(&self, sizes: &[usize], xs: &[f64], n_draws: usize, seed: u64) -> Result<Vec<ProbVector>> {
        check_probes(sizes, xs)?;
        if n_draws == 0 {
            return Err(Error::InvalidArgument("n_draws must be >= 1".into()));
        }
        let base = RngStream::new(seed);
        let mut acc = Accumulator::new(*sizes.last().unwrap(), xs.len(), sizes[0]);
        for k in 0..n_draws as u64 {
            let omega = self.sample(&mut base.substream(k));
            acc.add(&MLPParams::from_flat(sizes, omega)?, xs)?;
        }
        Ok(acc.finish())
    }
}
