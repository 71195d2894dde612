//! Minimal multilayer perceptron: tanh hidden layers, softmax output,
//! mean cross-entropy loss, plain minibatch SGD.
//!
//! # Parameter order
//!
//! Parameters are flattened layer by layer. For a layer mapping `n_in`
//! inputs to `n_out` outputs the weight matrix comes first, row-major
//! (`W[o][i]` at offset `o * n_in + i`), followed by the `n_out` biases.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::search::ModelEvaluator;
use crate::stats::{SeedSpec, WeightVector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
}

impl MlpSpec {
    /// `layer_sizes` is `[input_dim, hidden..., n_classes]`.
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("layer_sizes", "need at least input and output layers"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer_sizes", "all layer sizes must be >= 1"));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Layer sizes joined by `-`, e.g. `2-16-4`.
    pub fn to_header(&self) -> String {
        self.layer_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn from_header(s: &str) -> Result<Self> {
        let sizes = s
            .trim()
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid("layer_sizes", format!("bad layer size {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }

    /// `(weights offset, bias offset, n_in, n_out)` per layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let (n_in, n_out) = (w[0], w[1]);
            let start = offset;
            offset += n_out * (n_in + 1);
            (start, start + n_out * n_in, n_in, n_out)
        })
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                what: "model parameters",
                expected: self.param_count(),
                found: params.len(),
            });
        }
        Ok(())
    }

    /// Per-layer activations; the last entry holds the output logits.
    fn activations(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.layer_sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (l, (w_off, b_off, n_in, n_out)) in self.layers().enumerate() {
            let prev = &acts[l];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &params[w_off + o * n_in..w_off + (o + 1) * n_in];
                let mut s = params[b_off + o];
                for (wi, xi) in row.iter().zip(prev) {
                    s += wi * xi;
                }
                out.push(if l + 1 < n_layers { s.tanh() } else { s });
            }
            acts.push(out);
        }
        acts
    }

    fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.activations(params, x).pop().unwrap()
    }
}

/// Numerically stable softmax (log-sum-exp shift).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    params: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl MlpModel {
    pub fn zeros(spec: MlpSpec) -> Self {
        let params = vec![0.0; spec.param_count()];
        Self {
            spec,
            params,
            mask: None,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, seed: SeedSpec) -> Self {
        let mut rng = seed.rng();
        let mut params = vec![0.0; spec.param_count()];
        for (w_off, b_off, n_in, n_out) in spec.layers() {
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut params[w_off..b_off] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Self {
            spec,
            params,
            mask: None,
        }
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.check_params(&params)?;
        Ok(Self {
            spec,
            params,
            mask: None,
        })
    }

    /// Rebuilds a model from a flattened vector, keeping its mask.
    pub fn unflatten(spec: MlpSpec, w: &WeightVector) -> Result<Self> {
        let mut m = Self::from_params(spec, w.values().to_vec())?;
        m.mask = w.mask().map(<[bool]>::to_vec);
        Ok(m)
    }

    pub fn flatten(&self) -> WeightVector {
        let values = self.params.clone();
        match &self.mask {
            Some(m) => WeightVector::with_mask(values, m.clone()),
            None => WeightVector::new(values),
        }
        .expect("model parameters are finite and non-empty")
    }

    /// Marks entries that are never perturbed by channel noise.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        self.spec.check_params(&vec![0.0; mask.len()])?;
        self.mask = Some(mask);
        Ok(self)
    }

    /// Mask that marks every bias entry as noise-free.
    pub fn bias_mask(spec: &MlpSpec) -> Vec<bool> {
        let mut mask = vec![false; spec.param_count()];
        for (_, b_off, _, n_out) in spec.layers() {
            mask[b_off..b_off + n_out].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }
}

/// Labelled examples with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl Examples {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "feature dimension must be >= 1"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::LengthMismatch {
                what: "features",
                expected: dim * labels.len(),
                found: features.len(),
            });
        }
        Ok(Self { features, dim, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn subset(&self, idx: &[usize]) -> Examples {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.feature(i));
        }
        Examples {
            features,
            dim: self.dim,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenation in argument order.
    pub fn concat(parts: &[&Examples]) -> Result<Examples> {
        let dim = parts.first().ok_or(Error::Empty("example list"))?.dim;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != dim {
                return Err(Error::LengthMismatch {
                    what: "feature dimension",
                    expected: dim,
                    found: p.dim,
                });
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Ok(Examples { features, dim, labels })
    }

    fn check_model(&self, spec: &MlpSpec) -> Result<()> {
        if self.dim != spec.input_dim() {
            return Err(Error::LengthMismatch {
                what: "feature dimension",
                expected: spec.input_dim(),
                found: self.dim,
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= spec.n_classes()) {
            return Err(Error::invalid("labels", format!("label {bad} >= class count {}", spec.n_classes())));
        }
        Ok(())
    }
}

/// Class probabilities for one input.
pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.spec.input_dim() {
        return Err(Error::LengthMismatch {
            what: "input",
            expected: model.spec.input_dim(),
            found: x.len(),
        });
    }
    Ok(softmax(&model.spec.logits(&model.params, x)))
}

/// Mean cross-entropy over `batch`.
pub fn mlp_loss(model: &MlpModel, batch: &Examples) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    batch.check_model(&model.spec)?;
    let total: f64 = (0..batch.len())
        .map(|i| cross_entropy(&model.spec.logits(&model.params, batch.feature(i)), batch.label(i)))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean cross-entropy over `idx`, accumulated into `grad`.
fn accumulate_gradient(spec: &MlpSpec, params: &[f64], data: &Examples, idx: &[usize], grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let layers: Vec<_> = spec.layers().collect();
    let scale = 1.0 / idx.len() as f64;
    for &n in idx {
        let acts = spec.activations(params, data.feature(n));
        let mut delta = softmax(acts.last().unwrap());
        delta[data.label(n)] -= 1.0;
        for (l, &(w_off, b_off, n_in, n_out)) in layers.iter().enumerate().rev() {
            let prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o] * scale;
                grad[b_off + o] += d;
                let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(prev) {
                    *g += d * a;
                }
            }
            if l > 0 {
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = (0..n_out).map(|o| params[w_off + o * n_in + i] * delta[o]).sum();
                        back * (1.0 - prev[i] * prev[i])
                    })
                    .collect();
            }
        }
    }
}

/// Gradient of the mean cross-entropy over `batch`, in canonical order.
pub fn mlp_gradient(model: &MlpModel, batch: &Examples) -> Result<WeightVector> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    batch.check_model(&model.spec)?;
    let mut grad = vec![0.0; model.params.len()];
    let idx: Vec<usize> = (0..batch.len()).collect();
    accumulate_gradient(&model.spec, &model.params, batch, &idx, &mut grad);
    WeightVector::new(grad)
}

/// Minibatch SGD. Epoch `e` shuffles with stream `seed.child(e)`; the last
/// batch of an epoch may be short.
pub fn sgd_train(
    model: &MlpModel,
    data: &Examples,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: SeedSpec,
) -> Result<MlpModel> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::invalid("learning_rate", format!("must be finite and >= 0, got {learning_rate}")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be >= 1"));
    }
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    data.check_model(&model.spec)?;
    let mut out = model.clone();
    if learning_rate == 0.0 || epochs == 0 {
        return Ok(out);
    }
    let mut grad = vec![0.0; out.params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut seed.child(epoch as u64).rng());
        for batch in order.chunks(batch_size) {
            accumulate_gradient(&out.spec, &out.params, data, batch, &mut grad);
            for (p, g) in out.params.iter_mut().zip(&grad) {
                *p -= learning_rate * g;
            }
        }
    }
    if let Some(index) = out.params.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(out)
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(model: &MlpModel, split: &Examples) -> Result<f64> {
    accuracy_of(&model.spec, &model.params, split)
}

fn accuracy_of(spec: &MlpSpec, params: &[f64], split: &Examples) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    split.check_model(spec)?;
    spec.check_params(params)?;
    let correct = (0..split.len())
        .filter(|&i| argmax(&spec.logits(params, split.feature(i))) == split.label(i))
        .count();
    Ok(correct as f64 / split.len() as f64)
}

impl ModelEvaluator for MlpSpec {
    type Examples = Examples;

    fn param_count(&self) -> usize {
        MlpSpec::param_count(self)
    }

    fn example_count(&self, examples: &Examples) -> usize {
        examples.len()
    }

    /// Returns 0 for inputs that do not fit the model.
    fn accuracy(&self, params: &[f64], examples: &Examples) -> f64 {
        accuracy_of(self, params, examples).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Examples,
    pub validation: Examples,
    pub test: Examples,
    pub n_classes: usize,
}

/// Class means lie on a regular polygon in the first two coordinates with
/// adjacent means exactly one unit apart (on a line of unit spacing when
/// `dim == 1`). Each class is split 70/10/20 with rounded counts, and each
/// split is shuffled.
pub fn make_blobs(k_classes: usize, dim: usize, n_per_class: usize, spread: f64, seed: SeedSpec) -> Result<SyntheticDataset> {
    if k_classes == 0 || dim == 0 || n_per_class == 0 {
        return Err(Error::invalid("make_blobs", "class count, dimension and class size must be >= 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread", format!("must be finite and >= 0, got {spread}")));
    }
    let means = blob_means(k_classes, dim);
    let n_train = (0.7 * n_per_class as f64).round() as usize;
    let n_val = ((0.1 * n_per_class as f64).round() as usize).min(n_per_class - n_train);
    let mut rng = seed.child(0).rng();
    let mut splits: [(Vec<f64>, Vec<usize>); 3] = Default::default();
    for (k, mean) in means.iter().enumerate() {
        for j in 0..n_per_class {
            let s = if j < n_train {
                0
            } else if j < n_train + n_val {
                1
            } else {
                2
            };
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                splits[s].0.push(m + spread * z);
            }
            splits[s].1.push(k);
        }
    }
    let mut out = Vec::with_capacity(3);
    for (s, (features, labels)) in splits.into_iter().enumerate() {
        let ex = Examples::new(features, dim, labels)?;
        let mut order: Vec<usize> = (0..ex.len()).collect();
        order.shuffle(&mut seed.child(1 + s as u64).rng());
        out.push(ex.subset(&order));
    }
    let test = out.pop().unwrap();
    let validation = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok(SyntheticDataset {
        train,
        validation,
        test,
        n_classes: k_classes,
    })
}

fn blob_means(k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut m = vec![0.0; dim];
            if dim == 1 {
                m[0] = i as f64 - (k as f64 - 1.0) / 2.0;
            } else if k >= 2 {
                let radius = 1.0 / (2.0 * (PI / k as f64).sin());
                let angle = 2.0 * PI * i as f64 / k as f64;
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect()
}
