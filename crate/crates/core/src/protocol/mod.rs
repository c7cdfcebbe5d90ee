//! Active-learning runs: the acquisition loop, its protocol variants, and
//! training a final model on the acquired indices.

mod config;
mod record;
mod session;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};

pub use config::{LabelSource, Protocol, SessionConfig};
pub use record::{IterationRecord, RunRecord};
pub use session::{
    oracle_labeler, run_to_completion, Label, Progress, Query, Session, SessionSnapshot,
    SessionStatus, SubmitOutcome,
};

use crate::dataset::{oracle_label, DatasetManifest, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::models::{train, Architecture, ProbeModel, TrainReport};
use crate::rng;

/// The model returned after the loop, with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalModel {
    pub model: ProbeModel,
    pub protocol: Protocol,
    pub backbone: String,
    /// Documents it was trained on, in training order.
    pub trained_on: Vec<usize>,
}

impl FinalModel {
    /// Accuracy on the manifest holdout, if it is labeled.
    pub fn holdout_accuracy(
        &self,
        features: ArrayView2<'_, f64>,
        manifest: &DatasetManifest,
    ) -> Result<Option<f64>> {
        match holdout_set(features, manifest) {
            Some((x, y)) => Ok(Some(self.model.accuracy(x.view(), &y)?)),
            None => Ok(None),
        }
    }
}

/// Holdout rows and labels, when the holdout is non-empty and fully labeled.
pub(crate) fn holdout_set(
    features: ArrayView2<'_, f64>,
    manifest: &DatasetManifest,
) -> Option<(Array2<f64>, Vec<usize>)> {
    let rows = manifest.holdout();
    if rows.is_empty() {
        return None;
    }
    let labels: Option<Vec<usize>> = rows.iter().map(|&i| manifest.label(i)).collect();
    Some((features.select(Axis(0), rows), labels?))
}

fn train_probe_model(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    k: usize,
    config: &SessionConfig,
) -> Result<(ProbeModel, TrainReport)> {
    let tc = config
        .probe
        .clone()
        .with_seed(rng::derive(config.seed, rng::STREAM_PROBE_INIT));
    train(&Architecture::linear(config.dropout_rate), x, y, k, &tc)
}

/// The expensive model always starts from the same initialization, so its
/// fit on `I_t` depends only on the seed and `I_t`.
fn train_expensive_model(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    k: usize,
    config: &SessionConfig,
) -> Result<(ProbeModel, TrainReport)> {
    let tc = config
        .final_model
        .clone()
        .with_seed(rng::derive(config.seed, rng::STREAM_FINAL_INIT));
    train(
        &Architecture::mlp(config.proxy_width, config.dropout_rate),
        x,
        y,
        k,
        &tc,
    )
}

pub(crate) fn train_loop_model(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    k: usize,
    config: &SessionConfig,
) -> Result<(ProbeModel, TrainReport)> {
    if config.protocol.expensive_loop() {
        train_expensive_model(x, y, k, config)
    } else {
        train_probe_model(x, y, k, config)
    }
}

pub(crate) fn train_final_model(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    k: usize,
    config: &SessionConfig,
) -> Result<(ProbeModel, TrainReport)> {
    if config.protocol.expensive_final() {
        train_expensive_model(x, y, k, config)
    } else {
        train_probe_model(x, y, k, config)
    }
}

/// Runs a session with labels from the manifest.
pub fn run_session(
    embeddings: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    config: &SessionConfig,
) -> Result<RunRecord> {
    if config.label_source == LabelSource::Interactive {
        return Err(Error::Configuration(
            "interactive sessions need a label callback (see run_session_with)".into(),
        ));
    }
    Ok(run_session_with(embeddings, manifest, config, oracle_labeler(manifest))?.0)
}

/// Runs a session, asking `labeler` for every query.
pub fn run_session_with<F>(
    embeddings: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    config: &SessionConfig,
    labeler: F,
) -> Result<(RunRecord, FinalModel)>
where
    F: FnMut(&Query) -> Result<Vec<(usize, Label)>>,
{
    let clock = Instant::now();
    let features = Arc::new(embeddings.to_f64());
    let ingest = clock.elapsed().as_secs_f64();
    let mut session = Session::new(features, Arc::new(manifest.clone()), config.clone())?;
    session.record_mut().ingest_seconds = ingest;
    run_to_completion(&mut session, labeler)?;
    let model = session.take_final_model().expect("completed session has a model");
    Ok((session.record().clone(), model))
}

/// One label per iteration. Curves are checkpointed every 50 labels unless
/// the config says otherwise.
pub fn run_sequential(
    embeddings: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    config: &SessionConfig,
) -> Result<RunRecord> {
    if config.batch_size != 1 {
        return Err(Error::invalid(
            "b",
            format!("sequential runs acquire one label per iteration, got {}", config.batch_size),
        ));
    }
    let mut config = config.clone();
    config.checkpoint_every.get_or_insert(50);
    run_session(embeddings, manifest, &config)
}

/// Trains the final model of `config.protocol` on another backbone's
/// representations of the documents `indices` (in that order).
pub fn transfer_train(
    indices: &[usize],
    target: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    config: &SessionConfig,
) -> Result<FinalModel> {
    if target.rows() != manifest.n {
        return Err(Error::IncompatibleBackbones {
            source_rows: manifest.n,
            target_rows: target.rows(),
        });
    }
    if indices.is_empty() {
        return Err(Error::invalid("indices", "nothing to train on"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= target.rows()) {
        return Err(Error::invalid(
            "indices",
            format!("{bad} out of range for {} rows", target.rows()),
        ));
    }
    let labels = oracle_label(manifest, indices)?;
    let features = target.to_f64();
    let x = features.select(Axis(0), indices);
    let (model, _) = train_final_model(x.view(), &labels, manifest.num_classes, config)?;
    Ok(FinalModel {
        model,
        protocol: config.protocol,
        backbone: config.backbone.clone(),
        trained_on: indices.to_vec(),
    })
}

/// `|a ∩ b| / |a ∪ b|`, and 1 when both are empty.
pub fn jaccard_overlap(a: &[usize], b: &[usize]) -> f64 {
    let a: HashSet<usize> = a.iter().copied().collect();
    let b: HashSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}
