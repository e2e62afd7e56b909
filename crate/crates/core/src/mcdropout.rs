//! Monte Carlo dropout: average the softmax of M stochastic forward passes.
//!
//! Pass `m` on probe `i` draws its masks from `RngStream::new(seed).substream2(i, m)`,
//! so results do not depend on batching or thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{forward_batch, DropoutMasks, MLPParams};
use crate::numerics::{entropy, softmax, ProbVector, RngStream};

const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MCDropoutConfig {
    pub n_samples: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for MCDropoutConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl MCDropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
        }
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate must be in (0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Averaged prediction for one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct McPrediction {
    pub mean: ProbVector,
    /// Mean of the per-pass entropies (a secondary statistic; never larger
    /// than the entropy of `mean`).
    pub mean_pass_entropy: f64,
}

impl McPrediction {
    pub fn entropy(&self) -> f64 {
        entropy(&self.mean)
    }
}

// One chunk of probes with global indices starting at `first`.
fn predict_chunk(p: &MLPParams, xs: &[f64], first: u64, cfg: &MCDropoutConfig) -> Result<Vec<McPrediction>> {
    let batch = xs.len() / p.input_dim();
    let classes = p.output_dim();
    let base = RngStream::new(cfg.seed);
    let mut sums = vec![0.0; batch * classes];
    let mut pass_entropy = vec![0.0; batch];
    for m in 0..cfg.n_samples as u64 {
        let mut streams: Vec<RngStream> = (0..batch as u64).map(|i| base.substream2(first + i, m)).collect();
        let masks = DropoutMasks::from_streams(p.sizes(), cfg.dropout_rate, &mut streams);
        let cache = forward_batch(p, xs, batch, Some(&masks))?;
        for i in 0..batch {
            let probs = softmax(cache.logits(i));
            pass_entropy[i] += entropy(&probs);
            for (s, v) in sums[i * classes..(i + 1) * classes].iter_mut().zip(probs.as_slice()) {
                *s += v;
            }
        }
    }
    let inv = 1.0 / cfg.n_samples as f64;
    Ok((0..batch)
        .map(|i| {
            let mean: Vec<f64> = sums[i * classes..(i + 1) * classes].iter().map(|s| s * inv).collect();
            McPrediction {
                mean: ProbVector::renormalized(mean),
                mean_pass_entropy: pass_entropy[i] * inv,
            }
        })
        .collect())
}

/// MC-dropout predictions for `n` probes stored column-major in `xs`
/// (`input_dim × n`). Probe `i` uses stream index `first_index + i`.
/// Chunks run on the current rayon pool.
pub fn mc_predict_batch(
    p: &MLPParams,
    xs: &[f64],
    first_index: u64,
    cfg: &MCDropoutConfig,
) -> Result<Vec<McPrediction>> {
    cfg.validate()?;
    let dim = p.input_dim();
    if !xs.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: xs.len() % dim,
        });
    }
    let chunks: Vec<Vec<McPrediction>> = xs
        .par_chunks(CHUNK * dim)
        .enumerate()
        .map(|(c, chunk)| predict_chunk(p, chunk, first_index + (c * CHUNK) as u64, cfg))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// ŷ = (1/M) Σ softmax(stochastic forward pass).
pub fn mc_average(p: &MLPParams, x: &[f64], cfg: &MCDropoutConfig) -> Result<ProbVector> {
    if x.len() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.input_dim(),
            got: x.len(),
        });
    }
    Ok(mc_predict_batch(p, x, 0, cfg)?.remove(0).mean)
}

/// Entropy of the averaged prediction, in nats.
pub fn mc_entropy(p: &MLPParams, x: &[f64], cfg: &MCDropoutConfig) -> Result<f64> {
    Ok(entropy(&mc_average(p, x, cfg)?))
}

/// Mean `mc_entropy` for each class label `0..=max label` in `d`. Sample `i`
/// uses stream index `i`.
pub fn per_class_mean_entropy(p: &MLPParams, d: &Dataset, cfg: &MCDropoutConfig) -> Result<BTreeMap<usize, f64>> {
    let preds = mc_predict_batch(p, d.features().as_slice(), 0, cfg)?;
    let max_label = d.labels().iter().copied().max().unwrap_or(0);
    let mut acc = vec![(0.0, 0usize); max_label + 1];
    for (pred, &y) in preds.iter().zip(d.labels()) {
        acc[y].0 += pred.entropy();
        acc[y].1 += 1;
    }
    if let Some(missing) = acc.iter().position(|&(_, n)| n == 0) {
        return Err(Error::EmptyResult(format!("no samples of class {missing}")));
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(c, (s, n))| (c, s / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DataSource, Dataset};
    use crate::nnet::{forward, mlp_init, predict_proba};
    use crate::numerics::DenseMatrix;

    fn cfg(m: usize, seed: u64) -> MCDropoutConfig {
        MCDropoutConfig {
            n_samples: m,
            dropout_rate: 0.5,
            seed,
        }
    }

    #[test]
    fn vanishing_rate_recovers_deterministic_softmax() {
        let p = mlp_init(&[2, 40, 2], 1).unwrap();
        let x = [0.3, -0.8];
        let c = MCDropoutConfig {
            dropout_rate: 1e-12,
            ..cfg(20, 0)
        };
        let a = mc_average(&p, &x, &c).unwrap();
        let b = predict_proba(&p, &x).unwrap();
        assert!((a.get(1) - b.get(1)).abs() < 1e-9);
    }

    #[test]
    fn single_pass_is_one_stochastic_forward() {
        let p = mlp_init(&[2, 40, 40, 2], 2).unwrap();
        let x = [1.0, 0.5];
        let c = cfg(1, 3);
        let mut rng = RngStream::new(3).substream2(0, 0);
        let (z, _) = forward(&p, &x, 0.5, Some(&mut rng)).unwrap();
        let direct = softmax(&z);
        let got = mc_average(&p, &x, &c).unwrap();
        assert!((got.get(0) - direct.get(0)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_batch_independent() {
        let p = mlp_init(&[2, 30, 2], 4).unwrap();
        let xs: Vec<f64> = (0..600).map(|i| (i as f64 * 0.37).sin() * 4.0).collect();
        let a = mc_predict_batch(&p, &xs, 0, &cfg(100, 5)).unwrap();
        let b = mc_predict_batch(&p, &xs, 0, &cfg(100, 5)).unwrap();
        assert_eq!(a, b);
        // Probe 7 alone with the same stream index gives the same answer.
        let single = mc_predict_batch(&p, &xs[14..16], 7, &cfg(100, 5)).unwrap();
        assert_eq!(single[0], a[7]);
    }

    #[test]
    fn normalized_and_jensen() {
        let p = mlp_init(&[2, 50, 2], 6).unwrap();
        let mut rng = RngStream::new(1);
        let xs: Vec<f64> = (0..200).map(|_| rng.uniform_range(-6.0, 6.0)).collect();
        for m in [1, 7, 100] {
            for pred in mc_predict_batch(&p, &xs, 0, &cfg(m, 2)).unwrap() {
                let s: f64 = pred.mean.as_slice().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(pred.entropy() >= pred.mean_pass_entropy - 1e-12);
                assert!(pred.entropy() <= std::f64::consts::LN_2);
            }
        }
    }

    #[test]
    fn variance_shrinks_with_more_passes() {
        let p = mlp_init(&[2, 50, 2], 8).unwrap();
        let x = [0.2, -0.1];
        let var_for = |m: usize| {
            let v: Vec<f64> = (0..10)
                .map(|s| mc_average(&p, &x, &cfg(m, 100 + s)).unwrap().get(0))
                .collect();
            let mean = v.iter().sum::<f64>() / 10.0;
            v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / 9.0
        };
        let (v10, v100, v1000) = (var_for(10), var_for(100), var_for(1000));
        assert!(v10 > v100 && v100 > v1000, "{v10} {v100} {v1000}");
    }

    #[test]
    fn per_class_means() {
        let p = mlp_init(&[2, 20, 2], 9).unwrap();
        let feats = DenseMatrix::from_col_major(2, 3, vec![0.0, 1.0, 2.0, 2.0, -1.0, 0.5]).unwrap();
        let d = Dataset::new(feats, vec![0, 1, 1], DataSource::Probe).unwrap();
        let c = cfg(50, 1);
        let means = per_class_mean_entropy(&p, &d, &c).unwrap();
        let preds = mc_predict_batch(&p, d.features().as_slice(), 0, &c).unwrap();
        assert_eq!(means[&0], preds[0].entropy());
        assert!((means[&1] - (preds[1].entropy() + preds[2].entropy()) / 2.0).abs() < 1e-15);

        let gap = Dataset::new(
            DenseMatrix::from_col_major(2, 2, vec![0.0; 4]).unwrap(),
            vec![0, 2],
            DataSource::Probe,
        )
        .unwrap();
        assert!(matches!(
            per_class_mean_entropy(&p, &gap, &c),
            Err(Error::EmptyResult(_))
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let p = mlp_init(&[2, 2, 2], 0).unwrap();
        assert!(mc_average(&p, &[0.0, 0.0], &cfg(0, 0)).is_err());
        let c = MCDropoutConfig {
            dropout_rate: 0.0,
            ..cfg(5, 0)
        };
        assert!(mc_average(&p, &[0.0, 0.0], &c).is_err());
        assert!(matches!(
            mc_average(&p, &[0.0], &cfg(5, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
