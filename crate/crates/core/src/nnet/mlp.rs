use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, log_softmax, softmax, DenseMatrix, MatRef, ProbVector, RngStream};

/// Weights and biases of a ReLU multilayer perceptron.
///
/// All parameters live in one flat vector; layer `l` stores its `out × in`
/// weight matrix column-major followed by its `out` biases. The same layout
/// is used for gradients and for the parameter vectors of the Bayesian
/// methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPParams {
    sizes: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

fn spans(sizes: &[usize]) -> impl Iterator<Item = LayerSpan> + '_ {
    let mut offset = 0;
    sizes.windows(2).map(move |w| {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = LayerSpan {
            fan_in,
            fan_out,
            weights: offset,
            biases: offset + fan_in * fan_out,
        };
        offset += fan_in * fan_out + fan_out;
        s
    })
}

/// Number of parameters of an architecture.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "need at least two nonzero layer sizes, got {sizes:?}"
        )));
    }
    Ok(())
}

impl MLPParams {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            values: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_flat(sizes: &[usize], values: Vec<f64>) -> Result<Self> {
        check_sizes(sizes)?;
        if values.len() != param_count(sizes) {
            return Err(Error::DimensionMismatch {
                expected: param_count(sizes),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            values,
        })
    }

    /// Builds parameters from per-layer `(weights out×in, biases)` pairs.
    pub fn from_layers(layers: &[(DenseMatrix, Vec<f64>)]) -> Result<Self> {
        let mut sizes = vec![layers.first().map_or(0, |(w, _)| w.cols())];
        let mut values = Vec::new();
        for (w, b) in layers {
            if w.cols() != *sizes.last().unwrap() || b.len() != w.rows() {
                return Err(Error::DimensionMismatch {
                    expected: *sizes.last().unwrap(),
                    got: w.cols(),
                });
            }
            values.extend_from_slice(w.as_slice());
            values.extend_from_slice(b);
            sizes.push(w.rows());
        }
        Self::from_flat(&sizes, values)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    fn span(&self, layer: usize) -> LayerSpan {
        spans(&self.sizes).nth(layer).expect("layer index")
    }

    /// Weight matrix of `layer` (`out × in`).
    pub fn weights(&self, layer: usize) -> DenseMatrix {
        let s = self.span(layer);
        DenseMatrix::from_col_major(s.fan_out, s.fan_in, self.values[s.weights..s.biases].to_vec())
            .expect("finite parameters")
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let s = self.span(layer);
        &self.values[s.biases..s.biases + s.fan_out]
    }

    /// Flat indices of the weights (not biases).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for s in spans(&self.sizes) {
            mask[s.weights..s.biases].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights `U(±√(6/(in+out)))` and zero biases.
pub fn mlp_init(sizes: &[usize], seed: u64) -> Result<MLPParams> {
    let mut p = MLPParams::zeros(sizes)?;
    let mut rng = RngStream::new(seed);
    for s in spans(sizes).collect::<Vec<_>>() {
        let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
        for v in &mut p.values[s.weights..s.biases] {
            *v = rng.uniform_range(-limit, limit);
        }
    }
    Ok(p)
}

/// Inverted-dropout scale factors for the hidden layers of one batch:
/// each entry is 0 (dropped) or `1 / (1 − rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    layers: Vec<Vec<f64>>,
    batch: usize,
}

impl DropoutMasks {
    /// Draws masks hidden layer by hidden layer, sample by sample, unit by unit.
    pub fn sample(sizes: &[usize], batch: usize, rate: f64, rng: &mut RngStream) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let hidden = &sizes[1..sizes.len() - 1];
        let layers = hidden
            .iter()
            .map(|&units| {
                (0..units * batch)
                    .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { layers, batch }
    }

    /// One stream per sample; sample `i` draws its own masks layer by layer,
    /// so its masks do not depend on the rest of the batch.
    pub fn from_streams(sizes: &[usize], rate: f64, streams: &mut [RngStream]) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let hidden = &sizes[1..sizes.len() - 1];
        let batch = streams.len();
        let mut layers: Vec<Vec<f64>> = hidden.iter().map(|&u| Vec::with_capacity(u * batch)).collect();
        for rng in streams.iter_mut() {
            for (layer, &units) in layers.iter_mut().zip(hidden) {
                layer.extend((0..units).map(|_| if rng.bernoulli(keep) { scale } else { 0.0 }));
            }
        }
        Self { layers, batch }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn layer(&self, hidden: usize) -> &[f64] {
        &self.layers[hidden]
    }
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Post-activation (after ReLU and dropout) input of each layer; index 0 is the input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer; the last one holds the logits.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Logits of sample `i`.
    pub fn logits(&self, i: usize) -> &[f64] {
        let out = self.pre.last().unwrap();
        let c = out.len() / self.batch;
        &out[i * c..(i + 1) * c]
    }

    /// Pre-activations of `layer` as `units × batch` column-major.
    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }

    /// Hidden activations entering layer `layer + 1`, after ReLU and dropout.
    pub fn hidden(&self, layer: usize) -> &[f64] {
        &self.inputs[layer + 1]
    }
}

/// Batched forward pass. `xs` is `input_dim × batch` column-major.
pub fn forward_batch(p: &MLPParams, xs: &[f64], batch: usize, masks: Option<&DropoutMasks>) -> Result<ForwardCache> {
    forward_batch_upto(p, xs, batch, masks, p.n_layers())
}

fn forward_batch_upto(
    p: &MLPParams,
    xs: &[f64],
    batch: usize,
    masks: Option<&DropoutMasks>,
    upto: usize,
) -> Result<ForwardCache> {
    if xs.len() != p.input_dim() * batch {
        return Err(Error::DimensionMismatch {
            expected: p.input_dim() * batch,
            got: xs.len(),
        });
    }
    if let Some(m) = masks {
        if m.batch != batch || m.layers.len() != p.n_layers() - 1 {
            return Err(Error::DimensionMismatch {
                expected: batch,
                got: m.batch,
            });
        }
    }
    let n_layers = p.n_layers();
    let mut inputs = Vec::with_capacity(upto + 1);
    let mut pre = Vec::with_capacity(upto);
    inputs.push(xs.to_vec());
    for (l, s) in spans(&p.sizes).take(upto).enumerate() {
        let mut z = vec![0.0; s.fan_out * batch];
        let bias = &p.values[s.biases..s.biases + s.fan_out];
        for col in z.chunks_exact_mut(s.fan_out) {
            col.copy_from_slice(bias);
        }
        gemm(
            s.fan_out,
            s.fan_in,
            batch,
            1.0,
            MatRef::col_major(&p.values[s.weights..s.biases], s.fan_out),
            MatRef::col_major(&inputs[l], s.fan_in),
            1.0,
            &mut z,
            s.fan_out,
        );
        if l + 1 < n_layers {
            let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if let Some(m) = masks {
                for (ai, &mi) in a.iter_mut().zip(&m.layers[l]) {
                    *ai *= mi;
                }
            }
            inputs.push(a);
        }
        pre.push(z);
    }
    Ok(ForwardCache { batch, inputs, pre })
}

/// Forward pass for one input. With `rng` present, inverted dropout at
/// `dropout_rate` is applied to every hidden activation; without it the pass
/// is deterministic.
pub fn forward(
    p: &MLPParams,
    x: &[f64],
    dropout_rate: f64,
    rng: Option<&mut RngStream>,
) -> Result<(Vec<f64>, ForwardCache)> {
    let masks = rng.map(|r| DropoutMasks::sample(&p.sizes, 1, dropout_rate, r));
    let cache = forward_batch(p, x, 1, masks.as_ref())?;
    Ok((cache.logits(0).to_vec(), cache))
}

/// Deterministic class probabilities.
pub fn predict_proba(p: &MLPParams, x: &[f64]) -> Result<ProbVector> {
    Ok(softmax(&forward(p, x, 0.0, None)?.0))
}

/// Deterministic activations after `upto_layer` layers (ReLU applied unless
/// it is the output layer). `upto_layer == n_layers` gives the logits.
pub fn encode(p: &MLPParams, x: &[f64], upto_layer: usize) -> Result<Vec<f64>> {
    if upto_layer == 0 || upto_layer > p.n_layers() {
        return Err(Error::InvalidArgument(format!(
            "upto_layer must be in 1..={}, got {upto_layer}",
            p.n_layers()
        )));
    }
    let cache = forward_batch_upto(p, x, 1, None, upto_layer)?;
    if upto_layer == p.n_layers() {
        Ok(cache.pre.last().unwrap().clone())
    } else {
        Ok(cache.inputs[upto_layer].clone())
    }
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    assert!(label < logits.len(), "label out of range");
    -log_softmax(logits)[label]
}

/// Mean cross-entropy over the batch plus `weight_decay · ½‖W‖²`, and its
/// gradient in the flat parameter layout.
pub fn backward(
    p: &MLPParams,
    xs: &[f64],
    labels: &[usize],
    masks: Option<&DropoutMasks>,
    weight_decay: f64,
) -> Result<(f64, MLPParams)> {
    let batch = labels.len();
    if batch == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let cache = forward_batch(p, xs, batch, masks)?;
    let (loss_sum, mut grad) = backward_sum(p, &cache, labels, masks)?;
    let inv = 1.0 / batch as f64;
    grad.values.iter_mut().for_each(|g| *g *= inv);
    let mut loss = loss_sum * inv;
    if weight_decay > 0.0 {
        for s in spans(&p.sizes) {
            for k in s.weights..s.biases {
                let w = p.values[k];
                loss += 0.5 * weight_decay * w * w;
                grad.values[k] += weight_decay * w;
            }
        }
    }
    Ok((loss, grad))
}

/// Summed cross-entropy over the batch and its gradient (no averaging, no
/// penalty). `cache` must come from [`forward_batch`] on the same batch.
pub fn backward_sum(
    p: &MLPParams,
    cache: &ForwardCache,
    labels: &[usize],
    masks: Option<&DropoutMasks>,
) -> Result<(f64, MLPParams)> {
    let batch = cache.batch;
    if labels.len() != batch {
        return Err(Error::DimensionMismatch {
            expected: batch,
            got: labels.len(),
        });
    }
    let classes = p.output_dim();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} >= {classes} classes")));
    }
    let mut grad = MLPParams {
        sizes: p.sizes.clone(),
        values: vec![0.0; p.values.len()],
    };

    // dL/dlogits = softmax − onehot, per sample.
    let mut loss = 0.0;
    let mut delta = cache.pre.last().unwrap().clone();
    for (i, &label) in labels.iter().enumerate() {
        let z = &mut delta[i * classes..(i + 1) * classes];
        let ls = log_softmax(z);
        loss -= ls[label];
        for (c, (zi, l)) in z.iter_mut().zip(&ls).enumerate() {
            *zi = l.exp() - if c == label { 1.0 } else { 0.0 };
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy"));
    }

    let layer_spans: Vec<LayerSpan> = spans(&p.sizes).collect();
    for (l, s) in layer_spans.iter().enumerate().rev() {
        // dW = δ · aᵀ, db = Σ δ.
        gemm(
            s.fan_out,
            batch,
            s.fan_in,
            1.0,
            MatRef::col_major(&delta, s.fan_out),
            MatRef::col_major_t(&cache.inputs[l], s.fan_in),
            0.0,
            &mut grad.values[s.weights..s.biases],
            s.fan_out,
        );
        let db = &mut grad.values[s.biases..s.biases + s.fan_out];
        for col in delta.chunks_exact(s.fan_out) {
            for (b, d) in db.iter_mut().zip(col) {
                *b += d;
            }
        }
        if l == 0 {
            break;
        }
        // δ_prev = (Wᵀ δ) ⊙ relu'(z_prev) ⊙ mask.
        let mut prev = vec![0.0; s.fan_in * batch];
        gemm(
            s.fan_in,
            s.fan_out,
            batch,
            1.0,
            MatRef::col_major_t(&p.values[s.weights..s.biases], s.fan_out),
            MatRef::col_major(&delta, s.fan_out),
            0.0,
            &mut prev,
            s.fan_in,
        );
        let z_prev = &cache.pre[l - 1];
        for (d, &z) in prev.iter_mut().zip(z_prev) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        if let Some(m) = masks {
            for (d, &mi) in prev.iter_mut().zip(&m.layers[l - 1]) {
                *d *= mi;
            }
        }
        delta = prev;
    }
    Ok((loss, grad))
}

/// Summed log-likelihood `Σ log softmax(f(x))[y]` over a dataset in batches.
pub fn log_likelihood(p: &MLPParams, features: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    const CHUNK: usize = 512;
    let dim = features.rows();
    let mut total = 0.0;
    for start in (0..labels.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(labels.len());
        let xs = &features.as_slice()[start * dim..end * dim];
        let cache = forward_batch(p, xs, end - start, None)?;
        for (i, &y) in labels[start..end].iter().enumerate() {
            total += log_softmax(cache.logits(i))[y];
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MLPParams {
        // 2-2-2 network with hand-picked weights.
        let w1 = DenseMatrix::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let b1 = vec![0.0, -1.0];
        let w2 = DenseMatrix::from_rows(&[&[1.0, 1.0], &[-2.0, 0.5]]);
        let b2 = vec![0.1, 0.2];
        MLPParams::from_layers(&[(w1, b1), (w2, b2)]).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = mlp_init(&[2, 300, 2], 7).unwrap();
        assert_eq!(a, mlp_init(&[2, 300, 2], 7).unwrap());
        assert_ne!(a, mlp_init(&[2, 300, 2], 8).unwrap());
        let m = mlp_init(&[784, 500, 2], 1).unwrap();
        assert_eq!(m.n_layers(), 2);
        let w0 = m.weights(0);
        let w1 = m.weights(1);
        assert_eq!((w0.rows(), w0.cols()), (500, 784));
        assert_eq!((w1.rows(), w1.cols()), (2, 500));
        let limit = (6.0f64 / 1284.0).sqrt();
        assert!(w0.as_slice().iter().all(|v| v.abs() <= limit));
        assert!(m.biases(0).iter().all(|&b| b == 0.0));
        assert_eq!(mlp_init(&[2, 2], 0).unwrap().n_layers(), 1);
        assert!(mlp_init(&[3], 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let p = MLPParams::zeros(&[3, 4, 2]).unwrap();
        let (z, _) = forward(&p, &[1.0, 2.0, 3.0], 0.0, None).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_forward() {
        let p = tiny();
        let x = [1.0, 0.5];
        // hidden: relu([1 - 0.5, 0.5 + 1 - 1]) = [0.5, 0.5]
        // logits: [0.5 + 0.5 + 0.1, -1 + 0.25 + 0.2] = [1.1, -0.55]
        let (z, _) = forward(&p, &x, 0.0, None).unwrap();
        assert_eq!(z, vec![0.5 + 0.5 + 0.1, -2.0 * 0.5 + 0.5 * 0.5 + 0.2]);
        let enc = encode(&p, &x, 1).unwrap();
        assert_eq!(enc, vec![0.5, 0.5]);
        assert_eq!(encode(&p, &x, 2).unwrap(), z);
        assert!(encode(&p, &x, 0).is_err());
        assert!(encode(&p, &x, 3).is_err());
        assert!(matches!(
            forward(&p, &[1.0], 0.0, None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let p = mlp_init(&[3, 10, 10, 2], 2).unwrap();
        let x = [0.3, -0.2, 0.9];
        let mut rng = RngStream::new(1);
        let (a, _) = forward(&p, &x, 0.0, Some(&mut rng)).unwrap();
        let (b, _) = forward(&p, &x, 0.0, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_output_dimension() {
        let p = mlp_init(&[784, 600, 20, 2], 3).unwrap();
        let x = vec![0.5; 784];
        assert_eq!(encode(&p, &x, 2).unwrap().len(), 20);
        let zero_in = vec![0.0; 784];
        assert!(encode(&p, &zero_in, 2).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        let direct = (-20f64).exp().ln_1p();
        assert!((cross_entropy(&[10.0, -10.0], 0) - direct).abs() < 1e-20);
        assert!((cross_entropy(&[10.0, -10.0], 0) - 2.06e-9).abs() < 1e-11);
        let a = cross_entropy(&[1.0, 3.0], 1);
        let b = cross_entropy(&[101.0, 103.0], 1);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_layer_gradient_is_logistic_regression() {
        let p = mlp_init(&[3, 2], 5).unwrap();
        let x = [0.2, -1.0, 0.7];
        let (_, g) = backward(&p, &x, &[1], None, 0.0).unwrap();
        let prob = predict_proba(&p, &x).unwrap();
        let r = [prob.get(0), prob.get(1) - 1.0];
        let gw = g.weights(0);
        for c in 0..2 {
            for j in 0..3 {
                assert!((gw[(c, j)] - r[c] * x[j]).abs() < 1e-15);
            }
            assert!((g.biases(0)[c] - r[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_batch_matches_single_sample() {
        let p = mlp_init(&[2, 5, 2], 9).unwrap();
        let x = [0.4, -0.3];
        let (l1, g1) = backward(&p, &x, &[0], None, 0.0).unwrap();
        let xs: Vec<f64> = x.iter().chain(x.iter()).chain(x.iter()).copied().collect();
        let (l3, g3) = backward(&p, &xs, &[0, 0, 0], None, 0.0).unwrap();
        assert!((l1 - l3).abs() < 1e-14);
        for (a, b) in g1.as_slice().iter().zip(g3.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn batched_forward_matches_single() {
        let p = mlp_init(&[3, 7, 4, 2], 4).unwrap();
        let xs = [0.1, 0.2, 0.3, -1.0, 0.0, 2.0];
        let cache = forward_batch(&p, &xs, 2, None).unwrap();
        for i in 0..2 {
            let (z, _) = forward(&p, &xs[3 * i..3 * i + 3], 0.0, None).unwrap();
            for (a, b) in z.iter().zip(cache.logits(i)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn masks_have_inverted_scale() {
        let mut rng = RngStream::new(0);
        let m = DropoutMasks::sample(&[2, 50, 30, 2], 4, 0.5, &mut rng);
        assert_eq!(m.layer(0).len(), 200);
        assert_eq!(m.layer(1).len(), 120);
        assert!(m.layer(0).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_expectation_matches_deterministic_activation() {
        let p = mlp_init(&[3, 12, 2], 21).unwrap();
        let x = [0.7, -0.4, 1.1];
        let clean = encode(&p, &x, 1).unwrap();
        let n = 100_000;
        let mut rng = RngStream::new(5);
        let mut sum = [0.0; 12];
        let mut sq = [0.0; 12];
        for _ in 0..n {
            let (_, cache) = forward(&p, &x, 0.3, Some(&mut rng)).unwrap();
            for (k, &h) in cache.hidden(0).iter().enumerate() {
                sum[k] += h;
                sq[k] += h * h;
            }
        }
        for k in 0..12 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - clean[k]).abs() <= 3.0 * se + 1e-12,
                "unit {k}: {mean} vs {}",
                clean[k]
            );
        }
    }
}
