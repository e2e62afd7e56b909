use super::mlp::{backward, forward_batch, DropoutMasks, MLPParams};
use crate::error::Result;
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a ReLU changed state inside ±ε.
    pub skipped: usize,
}

// Sign pattern of every hidden pre-activation.
pub(crate) fn relu_pattern(p: &MLPParams, xs: &[f64], batch: usize, masks: Option<&DropoutMasks>) -> Result<Vec<bool>> {
    let cache = forward_batch(p, xs, batch, masks)?;
    Ok((0..p.n_layers() - 1)
        .flat_map(|l| cache.pre_activations(l).iter().map(|&z| z > 0.0).collect::<Vec<_>>())
        .collect())
}

/// Compares [`backward`] against central differences on `n_coords` randomly
/// chosen parameters. Relative error is `|a − n| / max(|a| + |n|, 1e-8)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    p: &MLPParams,
    xs: &[f64],
    labels: &[usize],
    masks: Option<&DropoutMasks>,
    weight_decay: f64,
    n_coords: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let batch = labels.len();
    let (_, grad) = backward(p, xs, labels, masks, weight_decay)?;
    let mut rng = RngStream::new(seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = p.clone();
    for _ in 0..n_coords {
        let k = rng.below(p.len());
        let orig = p.as_slice()[k];
        probe.as_mut_slice()[k] = orig + eps;
        let pattern_hi = relu_pattern(&probe, xs, batch, masks)?;
        let (hi, _) = backward(&probe, xs, labels, masks, weight_decay)?;
        probe.as_mut_slice()[k] = orig - eps;
        let pattern_lo = relu_pattern(&probe, xs, batch, masks)?;
        let (lo, _) = backward(&probe, xs, labels, masks, weight_decay)?;
        probe.as_mut_slice()[k] = orig;
        if pattern_hi != pattern_lo {
            report.skipped += 1;
            continue;
        }
        let numeric = (hi - lo) / (2.0 * eps);
        let analytic = grad.as_slice()[k];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::mlp_init;

    fn batch(dim: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = RngStream::new(seed);
        let xs = (0..dim * n).map(|_| rng.standard_normal()).collect();
        let ys = (0..n).map(|_| rng.below(2)).collect();
        (xs, ys)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (i, sizes) in [vec![2, 2], vec![2, 300, 2], vec![3, 8, 6, 2], vec![20, 30, 20, 2]]
            .into_iter()
            .enumerate()
        {
            let p = mlp_init(&sizes, 10 + i as u64).unwrap();
            let (xs, ys) = batch(sizes[0], 5, i as u64);
            let r = gradient_check(&p, &xs, &ys, None, 1e-3, 50, 1e-5, 1).unwrap();
            assert!(r.checked > 25, "{sizes:?}: {r:?}");
            assert!(r.max_relative_error < 1e-5, "{sizes:?}: {r:?}");
        }
    }

    #[test]
    fn backward_with_dropout_masks_matches_finite_differences() {
        let sizes = [4, 16, 16, 2];
        let p = mlp_init(&sizes, 3).unwrap();
        let (xs, ys) = batch(4, 6, 9);
        let masks = DropoutMasks::sample(&sizes, 6, 0.5, &mut RngStream::new(2));
        let r = gradient_check(&p, &xs, &ys, Some(&masks), 0.0, 50, 1e-5, 4).unwrap();
        assert!(r.max_relative_error < 1e-5, "{r:?}");
    }
}
