use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{Architecture, Dense, ProbeModel};
use crate::error::{Error, Result};
use crate::rng;

const STREAM_INIT: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;
const STREAM_DROPOUT: u64 = 13;

/// Adam on mean cross-entropy with early stopping on the training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// `None` trains full-batch.
    pub minibatch_size: Option<usize>,
    pub early_stop_patience: usize,
    /// An epoch only resets the patience counter when it lowers the best
    /// training loss by more than this.
    pub min_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::probe()
    }
}

impl TrainConfig {
    /// Full-batch probe fit.
    pub fn probe() -> Self {
        Self {
            learning_rate: 1e-2,
            max_epochs: 500,
            minibatch_size: None,
            early_stop_patience: 20,
            min_delta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rng_seed: 0,
        }
    }

    /// Minibatch fit of the hidden-layer model.
    pub fn proxy() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 60,
            minibatch_size: Some(64),
            early_stop_patience: 5,
            min_delta: 1e-3,
            ..Self::probe()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early_stop_patience", "must be at least 1"));
        }
        if self.minibatch_size == Some(0) {
            return Err(Error::invalid("minibatch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta", "Adam betas must lie in [0, 1)"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::invalid("min_delta", "must be non-negative"));
        }
        Ok(())
    }
}

/// Diagnostics of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    fn new(config: &TrainConfig, model: &ProbeModel) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            t: 0,
            m: model.zero_grads(),
            v: model.zero_grads(),
        }
    }

    fn step(&mut self, model: &mut ProbeModel, grads: &[Dense]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in model
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

struct BestTracker {
    best_loss: f64,
    best_epoch: usize,
    best: ProbeModel,
    stale: usize,
    min_delta: f64,
}

impl BestTracker {
    /// Records the loss of `model` after `epoch` epochs.
    fn observe(&mut self, epoch: usize, loss: f64, model: &ProbeModel) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NumericalFailure { epoch, loss });
        }
        if loss < self.best_loss {
            if loss < self.best_loss - self.min_delta {
                self.stale = 0;
            } else {
                self.stale += 1;
            }
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.best.clone_from(model);
        } else {
            self.stale += 1;
        }
        Ok(())
    }
}

/// Fits a freshly initialized model and returns the parameters with the
/// lowest training loss seen.
///
/// Dropout, when the architecture has hidden layers and a positive rate, is
/// applied to hidden activations during training. The linear probe trains
/// without dropout; its rate only matters for Monte-Carlo scoring.
pub fn train(
    architecture: &Architecture,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(ProbeModel, TrainReport)> {
    config.validate()?;
    if features.nrows() == 0 {
        return Err(Error::invalid("features", "need at least one training row"));
    }
    if labels.len() != features.nrows() {
        return Err(Error::invalid(
            "labels",
            format!("{} labels for {} rows", labels.len(), features.nrows()),
        ));
    }
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        log::warn!(
            "training on a single class ({first}); the fitted model will be degenerate"
        );
    }

    let mut init_rng = rng::rng_for(config.rng_seed, STREAM_INIT);
    let mut model = ProbeModel::init(architecture, features.ncols(), num_classes, &mut init_rng)?;
    model.check_dims(&features)?;
    model.check_labels(features.nrows(), labels)?;
    let mut adam = Adam::new(config, &model);

    let n = features.nrows();
    let batch = config.minibatch_size.unwrap_or(n).min(n);
    let train_dropout = !architecture.is_linear() && architecture.dropout_rate > 0.0;
    let mut shuffle_rng = rng::rng_for(config.rng_seed, STREAM_SHUFFLE);
    let mut dropout_rng = rng::rng_for(config.rng_seed, STREAM_DROPOUT);

    let mut tracker = BestTracker {
        best_loss: f64::INFINITY,
        best_epoch: 0,
        best: model.clone(),
        stale: 0,
        min_delta: config.min_delta,
    };

    let initial_loss;
    let mut epochs_run = 0;
    if batch == n && !train_dropout {
        // Full-batch without dropout: the loss of the gradient pass is the
        // loss of the current parameters, so no separate evaluation.
        let mut first_loss = None;
        for epoch in 0..config.max_epochs {
            let pass = model.forward::<rand_chacha::ChaCha8Rng>(features, None);
            let (loss, grads) = model.backward(&pass, labels);
            first_loss.get_or_insert(loss);
            tracker.observe(epoch, loss, &model)?;
            if tracker.stale >= config.early_stop_patience {
                break;
            }
            adam.step(&mut model, &grads);
            epochs_run = epoch + 1;
        }
        if epochs_run == config.max_epochs {
            let loss = model.loss(features, labels)?;
            tracker.observe(epochs_run, loss, &model)?;
        }
        initial_loss = match first_loss {
            Some(l) => l,
            None => model.loss(features, labels)?,
        };
    } else {
        initial_loss = model.loss(features, labels)?;
        tracker.observe(0, initial_loss, &model)?;
        let mut order: Vec<usize> = (0..n).collect();
        let mut xb = Array2::<f64>::zeros((batch, features.ncols()));
        let mut yb = vec![0usize; batch];
        for epoch in 1..=config.max_epochs {
            if batch < n {
                order.shuffle(&mut shuffle_rng);
            }
            for chunk in order.chunks(batch) {
                let rows = chunk.len();
                if rows != xb.nrows() {
                    xb = Array2::zeros((rows, features.ncols()));
                    yb.resize(rows, 0);
                }
                for (k, &i) in chunk.iter().enumerate() {
                    xb.row_mut(k).assign(&features.row(i));
                    yb[k] = labels[i];
                }
                let pass = if train_dropout {
                    model.forward(xb.view(), Some(&mut dropout_rng))
                } else {
                    model.forward::<rand_chacha::ChaCha8Rng>(xb.view(), None)
                };
                let (_, grads) = model.backward(&pass, &yb[..rows]);
                adam.step(&mut model, &grads);
            }
            epochs_run = epoch;
            let loss = model.loss(features, labels)?;
            tracker.observe(epoch, loss, &model)?;
            if tracker.stale >= config.early_stop_patience {
                break;
            }
        }
    }

    let report = TrainReport {
        epochs_run,
        initial_loss,
        best_loss: tracker.best_loss,
        best_epoch: tracker.best_epoch,
    };
    Ok((tracker.best, report))
}

/// The cheap classifier refit on every iteration: the linear probe.
pub fn train_probe(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
    dropout_rate: f64,
    config: &TrainConfig,
) -> Result<ProbeModel> {
    Ok(train(
        &Architecture::linear(dropout_rate),
        features,
        labels,
        num_classes,
        config,
    )?
    .0)
}

/// Gathers `rows` of `features` into a dense matrix.
pub fn select_rows(features: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    features.select(Axis(0), rows)
}
