use ndarray::{Array1, Array2, ArrayView2, Axis, CowArray, Ix2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer layout of a classifier. An empty `hidden` list is multinomial
/// logistic regression `d -> K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn linear(dropout_rate: f64) -> Self {
        Self {
            hidden: Vec::new(),
            dropout_rate,
        }
    }

    pub fn mlp(width: usize, dropout_rate: f64) -> Self {
        Self {
            hidden: vec![width],
            dropout_rate,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(
                "dropout_rate",
                format!("must lie in [0, 1), got {}", self.dropout_rate),
            ));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `inputs x outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// The classifier refit on every iteration: a linear probe, or a ReLU
/// network whose last hidden layer doubles as a learned representation.
///
/// Flat parameter order, used by gradients and checkpoints: for each layer
/// from input to output, the weight matrix row-major (`inputs x outputs`),
/// then the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub(crate) architecture: Architecture,
    pub(crate) feature_dim: usize,
    pub(crate) num_classes: usize,
    pub(crate) layers: Vec<Dense>,
}

/// Cached activations of one forward pass, kept for backpropagation.
pub(crate) struct ForwardPass<'a> {
    /// Input to every layer (after ReLU and dropout for hidden layers).
    pub inputs: Vec<CowArray<'a, f64, Ix2>>,
    /// Pre-activation of every hidden layer.
    pub hidden_pre: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers applied after each hidden ReLU.
    pub hidden_masks: Vec<Option<Array2<f64>>>,
    pub logits: Array2<f64>,
}

impl ProbeModel {
    /// Weights `~ N(0, 1/fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        architecture: &Architecture,
        feature_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        architecture.validate()?;
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        let mut widths = vec![feature_dim];
        widths.extend(&architecture.hidden);
        widths.push(num_classes);
        let layers = widths
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (1.0 / w[0] as f64).sqrt()).unwrap();
                Dense {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| normal.sample(rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            architecture: architecture.clone(),
            feature_dim,
            num_classes,
            layers,
        })
    }

    /// A model with every parameter set to zero.
    pub fn zeros(architecture: &Architecture, feature_dim: usize, num_classes: usize) -> Result<Self> {
        let mut model = Self::init(architecture, feature_dim, num_classes, &mut crate::rng::rng(0))?;
        for layer in &mut model.layers {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.architecture.dropout_rate
    }

    pub fn is_linear(&self) -> bool {
        self.architecture.is_linear()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(
                "params",
                format!("expected {} values, got {}", self.param_count(), params.len()),
            ));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub(crate) fn zero_grads(&self) -> Vec<Dense> {
        self.layers.iter().map(Dense::zeros_like).collect()
    }

    pub(crate) fn check_dims(&self, features: &ArrayView2<'_, f64>) -> Result<()> {
        if features.ncols() != self.feature_dim {
            return Err(Error::invalid(
                "features",
                format!(
                    "model expects {} columns, got {}",
                    self.feature_dim,
                    features.ncols()
                ),
            ));
        }
        Ok(())
    }

    /// Forward pass. With `dropout` set, hidden activations are masked with
    /// inverted dropout drawn from the given generator.
    pub(crate) fn forward<'a, R: Rng + ?Sized>(
        &self,
        features: ArrayView2<'a, f64>,
        mut dropout: Option<&mut R>,
    ) -> ForwardPass<'a> {
        let rate = self.architecture.dropout_rate;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(self.layers.len() - 1);
        let mut hidden_masks = Vec::with_capacity(self.layers.len() - 1);
        let mut current = CowArray::from(features);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            if l == last {
                inputs.push(current);
                return ForwardPass {
                    inputs,
                    hidden_pre,
                    hidden_masks,
                    logits: z,
                };
            }
            let mut a = z.mapv(|v| v.max(0.0));
            let mask = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let cut = drop_threshold(rate);
                    let values = (0..a.len())
                        .map(|_| if rng.next_u32() < cut { 0.0 } else { keep })
                        .collect();
                    let mask = Array2::from_shape_vec(a.raw_dim(), values)
                        .expect("one multiplier per activation");
                    a *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            inputs.push(current);
            hidden_pre.push(z);
            hidden_masks.push(mask);
            current = CowArray::from(a);
        }
        unreachable!("a model always has an output layer")
    }

    /// Mean cross-entropy of a cached pass and its gradient.
    pub(crate) fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> (f64, Vec<Dense>) {
        let n = labels.len() as f64;
        let mut probs = pass.logits.clone();
        let mut loss = 0.0;
        for (mut row, &y) in probs.axis_iter_mut(Axis(0)).zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let target = row[y];
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            loss += sum.ln() + max - target;
            row /= sum;
        }
        let mut delta = probs;
        for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(labels) {
            row[y] -= 1.0;
        }
        delta /= n;

        let mut grads = self.zero_grads();
        for l in (0..self.layers.len()).rev() {
            grads[l].weights = pass.inputs[l].t().dot(&delta);
            grads[l].bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weights.t());
                let pre = &pass.hidden_pre[l - 1];
                upstream.zip_mut_with(pre, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                if let Some(mask) = &pass.hidden_masks[l - 1] {
                    upstream *= mask;
                }
                delta = upstream;
            }
        }
        (loss / n, grads)
    }

    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dims(&features)?;
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(features, None).logits)
    }

    /// Class probabilities with dropout disabled.
    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut logits = self.logits(features)?;
        softmax_rows_inplace(&mut logits);
        Ok(logits)
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|row| argmax(row.iter().copied()))
            .collect())
    }

    pub fn accuracy(&self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::invalid("labels", "accuracy of an empty set"));
        }
        let predicted = self.predict(features)?;
        let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Mean cross-entropy with dropout disabled.
    pub fn loss(&self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        Ok(self.loss_and_gradient(features, labels)?.0)
    }

    /// Mean cross-entropy and its gradient, flattened in parameter order.
    pub fn loss_and_gradient(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_dims(&features)?;
        self.check_labels(features.nrows(), labels)?;
        let pass = self.forward::<rand_chacha::ChaCha8Rng>(features, None);
        let (loss, grads) = self.backward(&pass, labels);
        let mut flat = Vec::with_capacity(self.param_count());
        for g in &grads {
            flat.extend(g.weights.iter());
            flat.extend(g.bias.iter());
        }
        Ok((loss, flat))
    }

    /// Gradient of the cross-entropy at one labeled example, over all
    /// parameters in flat order. Only defined for the linear probe, where it
    /// is `x (p - e_y)^T` followed by `p - e_y`.
    pub fn loss_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        if !self.is_linear() {
            return Err(Error::Unsupported(
                "per-example loss gradients are only provided for the linear probe".into(),
            ));
        }
        let row = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::invalid("x", e.to_string()))?;
        Ok(self.loss_and_gradient(row, &[y])?.1)
    }

    /// Output of the last hidden layer with dropout off; the input features
    /// themselves for a linear probe.
    pub fn representation(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dims(&features)?;
        if self.is_linear() {
            return Ok(features.to_owned());
        }
        let pass = self.forward::<rand_chacha::ChaCha8Rng>(features, None);
        Ok(pass.inputs.last().unwrap().to_owned())
    }

    pub(crate) fn check_labels(&self, rows: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != rows {
            return Err(Error::invalid(
                "labels",
                format!("{} labels for {rows} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::invalid(
                "labels",
                format!("class {bad} is not below K = {}", self.num_classes),
            ));
        }
        Ok(())
    }
}

/// A uniform `u32` below this drops a unit with probability `rate`.
pub(crate) fn drop_threshold(rate: f64) -> u32 {
    (rate * 4_294_967_296.0).round().min(u32::MAX as f64) as u32
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows_inplace(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        softmax_inplace(row.as_slice_mut().expect("rows are contiguous"));
    }
}

pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
