//! The work behind each subcommand, independent of argument parsing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use prepal_core::dataset::{load_embeddings, save_embeddings, DatasetManifest, EmbeddingMatrix, SyntheticSpec};
use prepal_core::evaluation::{
    curve, summary, timing_table, write_curves_csv, write_summary_csv, write_timing_csv,
    ExperimentGrid, Metric, TimingTable,
};
use prepal_core::protocol::{run_session, Protocol, RunRecord, SessionConfig};

use crate::config::GridConfig;
use crate::error::{CliError, Result};

/// Where a run's embeddings and manifest come from.
#[derive(Clone, Debug)]
pub enum DatasetSource {
    Files { embeddings: PathBuf, manifest: PathBuf },
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn load(&self) -> Result<(EmbeddingMatrix, DatasetManifest)> {
        let (emb, manifest) = match self {
            DatasetSource::Files { embeddings, manifest } => {
                (load_embeddings(embeddings)?, DatasetManifest::load(manifest)?)
            }
            DatasetSource::Synthetic(spec) => spec.generate()?,
        };
        manifest.validate()?;
        if emb.rows() != manifest.n {
            return Err(CliError::Usage(format!(
                "manifest {} describes {} documents but the embeddings have {} rows",
                manifest.name,
                manifest.n,
                emb.rows()
            )));
        }
        Ok((emb, manifest))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

/// Writes `record` as JSON at `path` and its index CSV next to it.
pub fn save_record(record: &RunRecord, path: &Path) -> Result<()> {
    create_parent(path)?;
    record.save(path)?;
    record.save_index_csv(path.with_extension("csv"))?;
    Ok(())
}

/// One benchmark-mode session, saved to `out`.
pub fn run(config: &SessionConfig, data: &DatasetSource, out: &Path) -> Result<RunRecord> {
    let (emb, manifest) = data.load()?;
    info!(
        "running {}/{} seed {} on {} ({} x {})",
        config.protocol,
        config.acquisition,
        config.seed,
        manifest.name,
        emb.rows(),
        emb.dims()
    );
    let record = run_session(&emb, &manifest, config)?;
    save_record(&record, out)?;
    Ok(record)
}

/// File stem of a grid cell's record.
pub fn cell_name(config: &SessionConfig) -> String {
    format!("{}_{}_s{}", config.protocol, config.acquisition, config.seed)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridOutcome {
    pub ran: Vec<String>,
    /// Cells whose record already existed with the same config.
    pub reused: Vec<String>,
    /// `protocol/scorer` pairs that cannot run.
    pub skipped: Vec<String>,
}

/// Runs every cell of `grid` into `out_dir`, reusing finished cells.
pub fn grid(grid: &GridConfig, data: &DatasetSource, out_dir: &Path) -> Result<GridOutcome> {
    let (emb, manifest) = data.load()?;
    let (cells, skipped) = grid.cells(manifest.pool_indices().len())?;
    for cell in &skipped {
        warn!("skipping {cell}: scorer unsupported by the protocol's loop model");
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut outcome = GridOutcome {
        skipped,
        ..GridOutcome::default()
    };
    for (i, config) in cells.iter().enumerate() {
        let name = cell_name(config);
        let path = out_dir.join(format!("{name}.json"));
        if let Ok(existing) = RunRecord::load(&path) {
            if existing.complete && existing.config == *config && existing.dataset == manifest.name {
                outcome.reused.push(name);
                continue;
            }
        }
        info!("[{}/{}] {name}", i + 1, cells.len());
        let record = run_session(&emb, &manifest, config)?;
        save_record(&record, &path)?;
        outcome.ran.push(name);
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
    pub gaps: Vec<String>,
}

/// Curves, summary and per-run timing tables for the records in `runs`.
pub fn report(runs: &Path, out_dir: &Path, reference: Protocol) -> Result<ReportOutcome> {
    let grid = ExperimentGrid::load_dir(runs)?;
    if grid.records().is_empty() {
        return Err(CliError::Usage(format!("no run records in {}", runs.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut files = Vec::new();
    let mut gaps = grid.gaps();

    let mut points = Vec::new();
    for metric in [Metric::Accuracy, Metric::JaccardVsReference] {
        let c = curve(&grid, metric, reference);
        points.extend(c.points);
        gaps.extend(c.gaps);
    }
    let path = out_dir.join("curves.csv");
    write_curves_csv(create(&path)?, &points)?;
    files.push(path);

    match summary(&grid) {
        Ok(table) => {
            let path = out_dir.join("summary.csv");
            write_summary_csv(create(&path)?, &table)?;
            files.push(path);
        }
        Err(e) => warn!("no summary table: {e}"),
    }

    let timing_dir = out_dir.join("timing");
    fs::create_dir_all(&timing_dir).map_err(|e| CliError::io(&timing_dir, e))?;
    for record in grid.records() {
        let path = timing_dir.join(format!("{}.csv", cell_name(&record.config)));
        write_timing_csv(create(&path)?, &timing_table(record))?;
        files.push(path);
    }
    gaps.sort();
    gaps.dedup();
    for gap in &gaps {
        warn!("partial grid: missing {gap}");
    }
    Ok(ReportOutcome { files, gaps })
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

/// Writes a synthetic dataset as `name.emb` and `name.json` in `out_dir`.
pub fn synth(spec: &SyntheticSpec, out_dir: &Path, name: Option<&str>) -> Result<(PathBuf, PathBuf)> {
    let (emb, mut manifest) = spec.generate()?;
    if let Some(name) = name {
        manifest.name = name.to_string();
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let emb_path = out_dir.join(format!("{}.emb", manifest.name));
    let manifest_path = out_dir.join(format!("{}.json", manifest.name));
    save_embeddings(&emb_path, &emb)?;
    manifest.save(&manifest_path)?;
    Ok((emb_path, manifest_path))
}

/// The phase table as aligned text.
pub fn write_timing_table<W: Write>(mut w: W, table: &TimingTable) -> std::io::Result<()> {
    writeln!(w, "{:<20} {:>12}", "phase", "seconds")?;
    for (phase, seconds) in table.rows() {
        writeln!(w, "{phase:<20} {seconds:>12.4}")?;
    }
    Ok(())
}
