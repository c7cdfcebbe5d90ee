use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SessionConfig;
use crate::dataset::Acquisition;
use crate::error::{Error, Result};

/// What happened at one acquisition iteration `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `|I_{t-1}|`, the training-set size of this iteration's model.
    pub labeled_before: usize,
    /// Documents shown for labeling, best first.
    pub queried: Vec<usize>,
    pub scores: Vec<f64>,
    /// The queried documents that received a label.
    pub acquired: Vec<usize>,
    /// Queried documents returned to the pool unlabeled.
    pub skipped: Vec<usize>,
    pub train_seconds: f64,
    pub train_epochs: usize,
    pub acquisition_seconds: f64,
    /// Holdout accuracy of this iteration's model, at checkpoints.
    pub holdout_accuracy: Option<f64>,
}

impl IterationRecord {
    pub fn score_of(&self, index: usize) -> Option<f64> {
        self.queried
            .iter()
            .position(|&i| i == index)
            .and_then(|p| self.scores.get(p).copied())
    }
}

/// Audit trail of a run: every acquisition, per-phase timings and the
/// final model's accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub config: SessionConfig,
    /// `I_0`.
    pub initial: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    /// `I_T` in acquisition order (grows as the run proceeds).
    pub labeled: Vec<usize>,
    pub final_accuracy: Option<f64>,
    pub final_train_epochs: Option<usize>,
    pub ingest_seconds: f64,
    pub final_training_seconds: f64,
    pub complete: bool,
    /// The pool ran out before `T` full batches were acquired.
    pub truncated: bool,
    /// Exported before completion.
    pub partial: bool,
}

impl RunRecord {
    pub fn new(dataset: impl Into<String>, config: SessionConfig) -> Self {
        Self {
            dataset: dataset.into(),
            config,
            initial: Vec::new(),
            iterations: Vec::new(),
            labeled: Vec::new(),
            final_accuracy: None,
            final_train_epochs: None,
            ingest_seconds: 0.0,
            final_training_seconds: 0.0,
            complete: false,
            truncated: false,
            partial: false,
        }
    }

    /// `(t, indices)` pairs, starting with `(0, I_0)`.
    pub fn acquisition_log(&self) -> Vec<Acquisition> {
        std::iter::once(Acquisition {
            iteration: 0,
            indices: self.initial.clone(),
        })
        .chain(self.iterations.iter().map(|it| Acquisition {
            iteration: it.iteration,
            indices: it.acquired.clone(),
        }))
        .collect()
    }

    /// `I_t`.
    pub fn labeled_through(&self, t: usize) -> Vec<usize> {
        let mut out = self.initial.clone();
        for it in self.iterations.iter().take_while(|it| it.iteration <= t) {
            out.extend_from_slice(&it.acquired);
        }
        out
    }

    pub fn total_retraining_seconds(&self) -> f64 {
        self.iterations.iter().map(|it| it.train_seconds).sum()
    }

    pub fn total_acquisition_seconds(&self) -> f64 {
        self.iterations.iter().map(|it| it.acquisition_seconds).sum()
    }

    /// `(labeled count, holdout accuracy)` at every evaluated checkpoint,
    /// ending with the final model at `|I_T|`.
    pub fn accuracy_points(&self) -> Vec<(usize, f64)> {
        let mut points: Vec<(usize, f64)> = self
            .iterations
            .iter()
            .filter_map(|it| it.holdout_accuracy.map(|a| (it.labeled_before, a)))
            .collect();
        if let Some(acc) = self.final_accuracy {
            points.retain(|&(n, _)| n != self.labeled.len());
            points.push((self.labeled.len(), acc));
        }
        points
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        fn strip(r: &RunRecord) -> RunRecord {
            let mut r = r.clone();
            r.ingest_seconds = 0.0;
            r.final_training_seconds = 0.0;
            for it in &mut r.iterations {
                it.train_seconds = 0.0;
                it.acquisition_seconds = 0.0;
            }
            r
        }
        strip(self) == strip(other)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Flat index log with columns `iteration,index,score`; the initial set
    /// is iteration 0 with an empty score.
    pub fn write_index_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "index", "score"])?;
        for &i in &self.initial {
            w.write_record(["0".to_string(), i.to_string(), String::new()])?;
        }
        for it in &self.iterations {
            for &i in &it.acquired {
                let score = it.score_of(i).map(|s| s.to_string()).unwrap_or_default();
                w.write_record([it.iteration.to_string(), i.to_string(), score])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn index_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_index_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_index_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_index_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> RunRecord {
        let mut r = RunRecord::new("toy", SessionConfig::default());
        r.initial = vec![4, 1];
        r.iterations.push(IterationRecord {
            iteration: 1,
            labeled_before: 2,
            queried: vec![7, 3],
            scores: vec![0.5, 0.25],
            acquired: vec![7, 3],
            skipped: vec![],
            train_seconds: 0.1,
            train_epochs: 3,
            acquisition_seconds: 0.2,
            holdout_accuracy: Some(0.6),
        });
        r.labeled = vec![4, 1, 7, 3];
        r.final_accuracy = Some(0.7);
        r
    }

    #[test]
    fn index_csv_layout() {
        let text = record().index_csv().unwrap();
        assert_eq!(text, "iteration,index,score\n0,4,\n0,1,\n1,7,0.5\n1,3,0.25\n");
    }

    #[test]
    fn json_round_trip() {
        let r = record();
        assert_eq!(RunRecord::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn outcome_ignores_timings() {
        let a = record();
        let mut b = record();
        b.iterations[0].train_seconds = 9.0;
        b.final_training_seconds = 3.0;
        assert!(a.same_outcome(&b));
        b.iterations[0].acquired.swap(0, 1);
        assert!(!a.same_outcome(&b));
    }

    #[test]
    fn accuracy_points_end_with_final_model() {
        assert_eq!(record().accuracy_points(), vec![(2, 0.6), (4, 0.7)]);
        assert_eq!(record().labeled_through(0), vec![4, 1]);
        assert_eq!(record().labeled_through(1), vec![4, 1, 7, 3]);
    }
}
