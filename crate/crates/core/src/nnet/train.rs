use serde::{Deserialize, Serialize};

use super::mlp::{backward, forward_batch, DropoutMasks, MLPParams};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            dropout_rate: 0.5,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descent step: `params -= lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MLPParams,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the training set with dropout off.
    pub train_accuracy: f64,
}

/// Minibatch training with cross-entropy loss. Shuffle order and dropout
/// masks come from one stream seeded by `cfg.seed`, so equal configs give
/// bit-identical parameters.
pub fn train(p: &MLPParams, d: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if d.dim() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.input_dim(),
            got: d.dim(),
        });
    }
    if let Some(&bad) = d.labels().iter().find(|&&l| l >= p.output_dim()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} exceeds the {} network outputs",
            p.output_dim()
        )));
    }
    let mut params = p.clone();
    let mut rng = RngStream::new(cfg.seed);
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..d.len()).collect();
    let dim = d.dim();
    let mut xs = Vec::with_capacity(dim * cfg.batch_size);
    let mut ys = Vec::with_capacity(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            xs.clear();
            ys.clear();
            for &i in chunk {
                xs.extend_from_slice(d.feature(i));
                ys.push(d.label(i));
            }
            let masks = (cfg.dropout_rate > 0.0)
                .then(|| DropoutMasks::sample(params.sizes(), chunk.len(), cfg.dropout_rate, &mut rng));
            let (loss, grad) = backward(&params, &xs, &ys, masks.as_ref(), cfg.weight_decay).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence(format!("non-finite loss in epoch {epoch}")),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss in epoch {epoch}")));
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(params.as_mut_slice(), grad.as_slice()),
                Optimizer::Sgd => {
                    for (w, g) in params.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                        *w -= cfg.learning_rate * g;
                    }
                }
            }
            if !params.all_finite() {
                return Err(Error::Divergence(format!("non-finite parameters in epoch {epoch}")));
            }
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let train_accuracy = accuracy(&params, d)?;
    Ok(TrainOutcome {
        params,
        epoch_losses,
        train_accuracy,
    })
}

/// Fraction of samples whose arg-max logit equals the label (dropout off).
pub fn accuracy(p: &MLPParams, d: &Dataset) -> Result<f64> {
    Ok(predict_labels(p, d)?
        .iter()
        .zip(d.labels())
        .filter(|(a, b)| a == b)
        .count() as f64
        / d.len() as f64)
}

/// Arg-max predictions for every sample.
pub fn predict_labels(p: &MLPParams, d: &Dataset) -> Result<Vec<usize>> {
    const CHUNK: usize = 512;
    let dim = d.dim();
    let mut out = Vec::with_capacity(d.len());
    for start in (0..d.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(d.len());
        let xs = &d.features().as_slice()[start * dim..end * dim];
        let cache = forward_batch(p, xs, end - start, None)?;
        for i in 0..end - start {
            let z = cache.logits(i);
            let best = (0..z.len()).fold(0, |b, c| if z[c] > z[b] { c } else { b });
            out.push(best);
        }
    }
    Ok(out)
}
