//! The session driver: one state machine shared by oracle runs and the
//! annotation service, so both follow exactly the same code path.
//!
//! A session alternates between `retraining` (the engine owes a model and a
//! query) and `awaiting_labels` (the annotator owes labels for the pending
//! batch) until the budget is spent and the final model is trained.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{holdout_set, train_final_model, train_loop_model, FinalModel, RunRecord};
use super::{IterationRecord, LabelSource, SessionConfig};
use crate::acquisition::AcquisitionContext;
use crate::dataset::{init_pool, DatasetManifest, PoolState};
use crate::error::{Error, Result};
use crate::rng;

/// An annotator's answer for one queried document.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Class(usize),
    /// Return the document to the pool without labeling it.
    Skip,
}

const SKIP: &str = "skip";

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Class(usize),
    Marker(String),
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Label::Class(c) => RawLabel::Class(*c),
            Label::Skip => RawLabel::Marker(SKIP.into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawLabel::deserialize(d)? {
            RawLabel::Class(c) => Ok(Label::Class(c)),
            RawLabel::Marker(m) if m == SKIP => Ok(Label::Skip),
            RawLabel::Marker(m) => Err(serde::de::Error::custom(format!(
                "expected a class id or \"{SKIP}\", got {m:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingLabels,
    Retraining,
    Complete,
}

/// A batch waiting for labels. Iteration 0 is the initial set and carries
/// no scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub iteration: usize,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub labeled: usize,
    pub budget: usize,
    pub iteration: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub status: SessionStatus,
    pub accepted: usize,
    /// Pending documents still without an answer.
    pub remaining: Vec<usize>,
}

/// Everything needed to resume a session, given its dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub status: SessionStatus,
    pub pool: PoolState,
    /// Class of every labeled document.
    pub labels: BTreeMap<usize, usize>,
    pub pending: Option<Query>,
    /// Answers received so far for the pending batch.
    pub received: BTreeMap<usize, Label>,
    pub record: RunRecord,
}

pub struct Session {
    features: Arc<Array2<f64>>,
    manifest: Arc<DatasetManifest>,
    state: SessionSnapshot,
    holdout: Option<(Array2<f64>, Vec<usize>)>,
    final_model: Option<FinalModel>,
}

impl Session {
    /// Draws `I_0`. Oracle sessions take its labels from the manifest and
    /// start in `retraining`; interactive sessions pose it as the first
    /// query.
    pub fn new(
        features: Arc<Array2<f64>>,
        manifest: Arc<DatasetManifest>,
        config: SessionConfig,
    ) -> Result<Self> {
        manifest.validate()?;
        if features.nrows() != manifest.n {
            return Err(Error::Validation(format!(
                "manifest describes {} documents but the embeddings have {} rows",
                manifest.n,
                features.nrows()
            )));
        }
        config.validate(manifest.pool_indices().len())?;
        let init = init_pool(&manifest, config.seed, config.n_init)?;
        let initial = init.labeled().to_vec();
        let unknown = initial.iter().find(|&&i| manifest.label(i).is_none()).copied();
        if let (Some(index), LabelSource::Oracle) = (unknown, config.label_source) {
            return Err(Error::UnlabeledInBenchmark { index });
        }

        let from_manifest = config.label_source == LabelSource::Oracle;
        let mut record = RunRecord::new(manifest.name.clone(), config);
        let state = if from_manifest {
            record.initial = initial.clone();
            record.labeled = initial.clone();
            SessionSnapshot {
                status: SessionStatus::Retraining,
                pool: init,
                labels: initial
                    .iter()
                    .map(|&i| (i, manifest.label(i).expect("checked")))
                    .collect(),
                pending: None,
                received: BTreeMap::new(),
                record,
            }
        } else {
            SessionSnapshot {
                status: SessionStatus::AwaitingLabels,
                pool: PoolState::empty(&manifest),
                labels: BTreeMap::new(),
                pending: Some(Query {
                    iteration: 0,
                    indices: initial,
                    scores: Vec::new(),
                }),
                received: BTreeMap::new(),
                record,
            }
        };
        let holdout = holdout_set(features.view(), &manifest);
        Ok(Self {
            features,
            manifest,
            state,
            holdout,
            final_model: None,
        })
    }

    /// Resumes a persisted session over its dataset.
    pub fn restore(
        snapshot: SessionSnapshot,
        features: Arc<Array2<f64>>,
        manifest: Arc<DatasetManifest>,
    ) -> Result<Self> {
        if features.nrows() != manifest.n || snapshot.record.dataset != manifest.name {
            return Err(Error::Validation("snapshot does not match the dataset".into()));
        }
        let holdout = holdout_set(features.view(), &manifest);
        Ok(Self {
            features,
            manifest,
            state: snapshot,
            holdout,
            final_model: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.state.record.config
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn status(&self) -> SessionStatus {
        self.state.status
    }

    pub fn pending(&self) -> Option<&Query> {
        self.state.pending.as_ref()
    }

    /// The pending query restricted to documents without an answer yet.
    pub fn unanswered(&self) -> Option<Query> {
        let pending = self.state.pending.as_ref()?;
        let (indices, scores) = pending
            .indices
            .iter()
            .enumerate()
            .filter(|(_, i)| !self.state.received.contains_key(i))
            .map(|(p, &i)| (i, pending.scores.get(p).copied()))
            .unzip::<_, _, Vec<usize>, Vec<Option<f64>>>();
        Some(Query {
            iteration: pending.iteration,
            indices,
            scores: scores.into_iter().flatten().collect(),
        })
    }

    pub fn snapshot(&self) -> &SessionSnapshot {
        &self.state
    }

    pub fn record(&self) -> &RunRecord {
        &self.state.record
    }

    pub fn record_mut(&mut self) -> &mut RunRecord {
        &mut self.state.record
    }

    /// The final model, once the session has completed in this process.
    pub fn final_model(&self) -> Option<&FinalModel> {
        self.final_model.as_ref()
    }

    pub fn take_final_model(&mut self) -> Option<FinalModel> {
        self.final_model.take()
    }

    pub fn progress(&self) -> Progress {
        let config = self.config();
        Progress {
            labeled: self.state.pool.len(),
            budget: config.budget().min(self.state.pool.pool_size()),
            iteration: self.state.record.iterations.len(),
            iterations: config.iterations,
        }
    }

    /// Wall time of the most recent retrain plus scoring step.
    pub fn last_cycle_seconds(&self) -> Option<f64> {
        self.state
            .record
            .iterations
            .last()
            .map(|it| it.train_seconds + it.acquisition_seconds)
    }

    /// Retrains on the current labeled set and issues the next query, or
    /// trains the final model once the budget is spent.
    pub fn advance(&mut self) -> Result<()> {
        match self.state.status {
            SessionStatus::Retraining => {}
            SessionStatus::AwaitingLabels => {
                return Err(Error::NotReady("labels are pending".into()));
            }
            SessionStatus::Complete => {
                return Err(Error::NotReady("session is complete".into()));
            }
        }
        let config = self.config().clone();
        let t = self.state.record.iterations.len() + 1;
        let candidates = self.state.pool.unlabeled();
        if t > config.iterations || candidates.is_empty() {
            return self.finish(t <= config.iterations);
        }

        let labeled = self.state.pool.labeled().to_vec();
        let (x, y) = self.training_set(&labeled);
        let k = self.manifest.num_classes;

        let clock = Instant::now();
        let (model, report) = train_loop_model(x.view(), &y, k, &config)?;
        let train_seconds = clock.elapsed().as_secs_f64();

        let checkpoint = config
            .checkpoint_every
            .is_none_or(|every| labeled.len() % every == 0);
        let holdout_accuracy = match (&self.holdout, checkpoint) {
            (Some((hx, hy)), true) => Some(model.accuracy(hx.view(), hy)?),
            _ => None,
        };

        let clock = Instant::now();
        let dynamic = if config.protocol.expensive_loop() && config.acquisition.uses_representation() {
            Some(model.representation(self.features.view())?)
        } else {
            None
        };
        let mut ctx = AcquisitionContext::new(
            self.features.view(),
            &model,
            &labeled,
            &candidates,
            rng::derive(rng::derive(config.seed, rng::STREAM_ACQUISITION), t as u64),
        );
        if let Some(d) = &dynamic {
            ctx.dynamic_features = d.view();
        }
        ctx.mc_samples = config.mc_samples;
        ctx.batchbald = config.batchbald.clone();
        ctx.discriminator = config.probe.clone();
        let picks = config
            .acquisition
            .select(&ctx, config.batch_size.min(candidates.len()))?;
        let acquisition_seconds = clock.elapsed().as_secs_f64();

        let indices: Vec<usize> = picks.iter().map(|p| p.index).collect();
        let scores: Vec<f64> = picks.iter().map(|p| p.score).collect();
        self.state.record.iterations.push(IterationRecord {
            iteration: t,
            labeled_before: labeled.len(),
            queried: indices.clone(),
            scores: scores.clone(),
            acquired: Vec::new(),
            skipped: Vec::new(),
            train_seconds,
            train_epochs: report.epochs_run,
            acquisition_seconds,
            holdout_accuracy,
        });
        self.state.pending = Some(Query {
            iteration: t,
            indices,
            scores,
        });
        self.state.status = SessionStatus::AwaitingLabels;
        Ok(())
    }

    fn training_set(&self, rows: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let x = self.features.select(Axis(0), rows);
        let y = rows.iter().map(|i| self.state.labels[i]).collect();
        (x, y)
    }

    fn finish(&mut self, ran_out: bool) -> Result<()> {
        let config = self.config().clone();
        let labeled = self.state.pool.labeled().to_vec();
        let (x, y) = self.training_set(&labeled);
        let clock = Instant::now();
        let (model, report) = train_final_model(x.view(), &y, self.manifest.num_classes, &config)?;
        let seconds = clock.elapsed().as_secs_f64();
        let accuracy = match &self.holdout {
            Some((hx, hy)) => Some(model.accuracy(hx.view(), hy)?),
            None => None,
        };

        let record = &mut self.state.record;
        record.final_training_seconds = seconds;
        record.final_train_epochs = Some(report.epochs_run);
        record.final_accuracy = accuracy;
        record.labeled = labeled.clone();
        record.truncated = ran_out
            || record
                .iterations
                .iter()
                .any(|it| it.queried.len() < config.batch_size);
        record.complete = true;
        self.final_model = Some(FinalModel {
            model,
            protocol: config.protocol,
            backbone: config.backbone.clone(),
            trained_on: labeled,
        });
        self.state.pending = None;
        self.state.status = SessionStatus::Complete;
        Ok(())
    }

    /// Accepts answers for part or all of the pending batch. Nothing is
    /// applied unless every answer is valid. Once the whole batch is
    /// answered the labels are committed and the session moves to
    /// `retraining`.
    pub fn submit(&mut self, answers: &[(usize, Label)]) -> Result<SubmitOutcome> {
        let pending = match (self.state.status, &self.state.pending) {
            (SessionStatus::AwaitingLabels, Some(p)) => p.clone(),
            (SessionStatus::Complete, _) => {
                return Err(Error::NotReady("session is complete".into()));
            }
            _ => return Err(Error::NotReady("the next batch is still being scored".into())),
        };
        let k = self.manifest.num_classes;
        let allow_skip = self.config().allow_skip;
        let mut fresh = std::collections::HashSet::new();
        for &(index, label) in answers {
            if !pending.indices.contains(&index) {
                let reason = if self.state.pool.is_labeled(index) {
                    "already labeled"
                } else {
                    "not in the pending batch"
                };
                return Err(Error::Rejected {
                    index,
                    reason: reason.into(),
                });
            }
            if self.state.received.contains_key(&index) || !fresh.insert(index) {
                return Err(Error::Rejected {
                    index,
                    reason: "already answered".into(),
                });
            }
            match label {
                Label::Class(c) if c >= k => {
                    return Err(Error::Validation(format!(
                        "class {c} for index {index} is not below K = {k}"
                    )));
                }
                Label::Skip if !allow_skip => {
                    return Err(Error::Rejected {
                        index,
                        reason: "skipping is disabled for this session".into(),
                    });
                }
                Label::Skip if pending.iteration == 0 => {
                    return Err(Error::Rejected {
                        index,
                        reason: "the initial set cannot be skipped".into(),
                    });
                }
                _ => {}
            }
        }
        for &(index, label) in answers {
            self.state.received.insert(index, label);
        }

        let remaining: Vec<usize> = pending
            .indices
            .iter()
            .copied()
            .filter(|i| !self.state.received.contains_key(i))
            .collect();
        if remaining.is_empty() {
            self.commit(&pending)?;
        }
        Ok(SubmitOutcome {
            status: self.state.status,
            accepted: answers.len(),
            remaining,
        })
    }

    fn commit(&mut self, pending: &Query) -> Result<()> {
        let mut acquired = Vec::new();
        let mut skipped = Vec::new();
        for &i in &pending.indices {
            match self.state.received[&i] {
                Label::Class(c) => {
                    acquired.push(i);
                    self.state.labels.insert(i, c);
                }
                Label::Skip => skipped.push(i),
            }
        }
        self.state.pool.extend(pending.iteration, &acquired)?;
        let record = &mut self.state.record;
        if pending.iteration == 0 {
            record.initial = acquired;
        } else {
            let it = record
                .iterations
                .last_mut()
                .expect("a scored iteration precedes its labels");
            it.acquired = acquired;
            it.skipped = skipped;
        }
        record.labeled = self.state.pool.labeled().to_vec();
        self.state.received.clear();
        self.state.pending = None;
        self.state.status = SessionStatus::Retraining;
        Ok(())
    }

    /// The run record; before completion only with `partial`, and then
    /// flagged as such.
    pub fn export(&self, partial: bool) -> Result<RunRecord> {
        if self.state.status == SessionStatus::Complete {
            return Ok(self.state.record.clone());
        }
        if !partial {
            return Err(Error::NotReady("session is not complete".into()));
        }
        let mut record = self.state.record.clone();
        record.partial = true;
        Ok(record)
    }
}

/// Drives a session to completion, asking `labeler` for each query.
pub fn run_to_completion<F>(session: &mut Session, mut labeler: F) -> Result<()>
where
    F: FnMut(&Query) -> Result<Vec<(usize, Label)>>,
{
    loop {
        match session.status() {
            SessionStatus::Complete => return Ok(()),
            SessionStatus::Retraining => session.advance()?,
            SessionStatus::AwaitingLabels => {
                let query = session.unanswered().expect("awaiting labels");
                let answers = labeler(&query)?;
                if session.submit(&answers)?.status == SessionStatus::AwaitingLabels {
                    return Err(Error::Configuration(
                        "the label callback left part of the batch unanswered".into(),
                    ));
                }
            }
        }
    }
}

/// Answers every query from the manifest's known labels.
pub fn oracle_labeler(
    manifest: &DatasetManifest,
) -> impl FnMut(&Query) -> Result<Vec<(usize, Label)>> + '_ {
    move |query| {
        let classes = crate::dataset::oracle_label(manifest, &query.indices)?;
        Ok(query
            .indices
            .iter()
            .zip(classes)
            .map(|(&i, c)| (i, Label::Class(c)))
            .collect())
    }
}
