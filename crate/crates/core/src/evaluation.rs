//! Aggregation of finished runs: accuracy and Jaccard curves across seeds,
//! per-phase timing tables and final-accuracy summaries, with CSV output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::Strategy;
use crate::error::{Error, Result};
use crate::protocol::{jaccard_overlap, Protocol, RunRecord};

/// Mean and sample standard deviation. Values are summed in sorted order so
/// the result does not depend on the order of the inputs.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    if sorted.len() < 2 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// Finished runs indexed by their grid coordinates.
#[derive(Clone, Debug, Default)]
pub struct ExperimentGrid {
    records: Vec<RunRecord>,
}

type CellKey = (Protocol, Strategy);

fn key_of(r: &RunRecord) -> (String, Protocol, Strategy, u64) {
    (
        r.dataset.clone(),
        r.config.protocol,
        r.config.acquisition,
        r.config.seed,
    )
}

impl ExperimentGrid {
    pub fn new(records: Vec<RunRecord>) -> Self {
        Self { records }
    }

    pub fn push(&mut self, record: RunRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// Loads every `*.json` run record in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let records = paths.iter().map(RunRecord::load).collect::<Result<_>>()?;
        Ok(Self { records })
    }

    fn cell(&self, protocol: Protocol, scorer: Strategy) -> Vec<&RunRecord> {
        self.records
            .iter()
            .filter(|r| r.config.protocol == protocol && r.config.acquisition == scorer)
            .collect()
    }

    fn cells(&self) -> BTreeSet<CellKey> {
        self.records
            .iter()
            .map(|r| (r.config.protocol, r.config.acquisition))
            .collect()
    }

    fn find(&self, dataset: &str, protocol: Protocol, scorer: Strategy, seed: u64) -> Option<&RunRecord> {
        self.records
            .iter()
            .find(|r| key_of(r) == (dataset.to_string(), protocol, scorer, seed))
    }

    /// Grid coordinates present for some cells but not others, as
    /// `dataset/protocol/scorer/seed` strings.
    pub fn gaps(&self) -> Vec<String> {
        let datasets: BTreeSet<&str> = self.records.iter().map(|r| r.dataset.as_str()).collect();
        let seeds: BTreeSet<u64> = self.records.iter().map(|r| r.config.seed).collect();
        let mut out = Vec::new();
        for d in &datasets {
            for &(p, s) in &self.cells() {
                for &seed in &seeds {
                    if self.find(d, p, s, seed).is_none() {
                        out.push(format!("{d}/{p}/{s}/{seed}"));
                    }
                }
            }
        }
        out
    }

    /// Holdout accuracies at exactly `budget` labels, one per seed that
    /// evaluated there.
    pub fn accuracy_at(&self, protocol: Protocol, scorer: Strategy, budget: usize) -> Vec<f64> {
        self.cell(protocol, scorer)
            .into_iter()
            .filter_map(|r| {
                r.accuracy_points()
                    .into_iter()
                    .find(|&(n, _)| n == budget)
                    .map(|(_, a)| a)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    JaccardVsReference,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::JaccardVsReference => "jaccard_vs_reference",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub protocol: Protocol,
    pub scorer: Strategy,
    pub budget: usize,
    pub mean: f64,
    pub std: f64,
    pub metric: Metric,
    /// Seeds contributing to this point.
    #[serde(skip)]
    pub seeds: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    /// Missing runs or reference runs; the curve is partial when non-empty.
    pub gaps: Vec<String>,
}

/// `(t, I_t)` at the run's checkpoints, always including the last `t`.
fn checkpoints(r: &RunRecord) -> Vec<(usize, Vec<usize>)> {
    let every = r.config.checkpoint_every;
    let last = r.iterations.len();
    (0..=last)
        .map(|t| (t, r.labeled_through(t)))
        .filter(|(t, set)| *t == last || every.is_none_or(|e| set.len() % e == 0))
        .collect()
}

/// Mean and standard deviation across seeds at every labeled-set size.
/// Jaccard curves compare each run's `I_t` with the `reference` protocol's
/// `I_t` for the same dataset, scorer and seed.
pub fn curve(grid: &ExperimentGrid, metric: Metric, reference: Protocol) -> Curve {
    let mut gaps = grid.gaps();
    let mut values: BTreeMap<(CellKey, usize), Vec<f64>> = BTreeMap::new();
    for r in grid.records() {
        let cell = (r.config.protocol, r.config.acquisition);
        match metric {
            Metric::Accuracy => {
                for (budget, acc) in r.accuracy_points() {
                    values.entry((cell, budget)).or_default().push(acc);
                }
            }
            Metric::JaccardVsReference => {
                let Some(other) =
                    grid.find(&r.dataset, reference, r.config.acquisition, r.config.seed)
                else {
                    gaps.push(format!(
                        "{}/{}/{}/{}: no {reference} reference",
                        r.dataset, r.config.protocol, r.config.acquisition, r.config.seed
                    ));
                    continue;
                };
                let last = other.iterations.len();
                for (t, ours) in checkpoints(r) {
                    if t > last {
                        break;
                    }
                    values
                        .entry((cell, ours.len()))
                        .or_default()
                        .push(jaccard_overlap(&ours, &other.labeled_through(t)));
                }
            }
        }
    }
    let points = values
        .into_iter()
        .map(|(((protocol, scorer), budget), v)| {
            let (mean, std) = mean_std(&v);
            CurvePoint {
                protocol,
                scorer,
                budget,
                mean,
                std,
                metric,
                seeds: v.len(),
            }
        })
        .collect();
    Curve { points, gaps }
}

/// Per-phase wall time of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub precompute_ingest: f64,
    pub total_retraining: f64,
    pub total_acquisition: f64,
    pub final_training: f64,
    pub total: f64,
}

impl TimingTable {
    pub fn rows(&self) -> [(&'static str, f64); 5] {
        [
            ("precompute_ingest", self.precompute_ingest),
            ("total_retraining", self.total_retraining),
            ("total_acquisition", self.total_acquisition),
            ("final_training", self.final_training),
            ("total", self.total),
        ]
    }
}

pub fn timing_table(record: &RunRecord) -> TimingTable {
    let ingest = record.ingest_seconds.max(0.0);
    let retraining = record.total_retraining_seconds().max(0.0);
    let acquisition = record.total_acquisition_seconds().max(0.0);
    let final_training = record.final_training_seconds.max(0.0);
    TimingTable {
        precompute_ingest: ingest,
        total_retraining: retraining,
        total_acquisition: acquisition,
        final_training,
        total: ingest + retraining + acquisition + final_training,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scorer: Strategy,
    pub protocol: Protocol,
    pub mean: f64,
    pub std: f64,
    pub above_random: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, scorer: Strategy, protocol: Protocol) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.scorer == scorer && r.protocol == protocol)
    }
}

/// Final accuracy per (scorer, protocol), flagged when its mean beats the
/// random baseline of the same protocol.
pub fn summary(grid: &ExperimentGrid) -> Result<SummaryTable> {
    let mut finals: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in grid.records() {
        let acc = r.final_accuracy.ok_or_else(|| {
            Error::Validation(format!(
                "run {}/{}/{}/{} has no final accuracy",
                r.dataset, r.config.protocol, r.config.acquisition, r.config.seed
            ))
        })?;
        finals
            .entry((r.config.protocol, r.config.acquisition))
            .or_default()
            .push(acc);
    }
    let mut rows = Vec::new();
    for (&(protocol, scorer), values) in &finals {
        let baseline = finals.get(&(protocol, Strategy::Random)).ok_or_else(|| {
            Error::Validation(format!("no random baseline for protocol {protocol}"))
        })?;
        let (mean, std) = mean_std(values);
        let (base, _) = mean_std(baseline);
        rows.push(SummaryRow {
            scorer,
            protocol,
            mean,
            std,
            above_random: scorer != Strategy::Random && mean > base,
        });
    }
    Ok(SummaryTable { rows })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

pub fn write_curves_csv<W: Write>(writer: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["protocol", "scorer", "budget", "mean", "std", "metric"])?;
    for p in points {
        w.write_record([
            p.protocol.name().to_string(),
            p.scorer.name().to_string(),
            p.budget.to_string(),
            p.mean.to_string(),
            p.std.to_string(),
            p.metric.name().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_summary_csv<W: Write>(writer: W, table: &SummaryTable) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["scorer", "protocol", "mean", "std", "above_random"])?;
    for r in &table.rows {
        w.write_record([
            r.scorer.name().to_string(),
            r.protocol.name().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.above_random.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_timing_csv<W: Write>(writer: W, table: &TimingTable) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["phase", "seconds"])?;
    for (phase, seconds) in table.rows() {
        w.write_record([phase.to_string(), seconds.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
