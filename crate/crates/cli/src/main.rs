use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use prepal_cli::commands::{self, DatasetSource};
use prepal_cli::config::{load_document, resolve, GridConfig, DATA_ROOT_ENV};
use prepal_cli::server::{serve, AppState};
use prepal_cli::{CliError, Result};
use prepal_core::dataset::SyntheticSpec;
use prepal_core::evaluation::timing_table;
use prepal_core::protocol::{Protocol, SessionConfig};

#[derive(Parser)]
#[command(name = "prepal", version, about = "Active learning over precomputed representations")]
struct Cli {
    /// Directory that relative paths are resolved against.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session from a config file.
    Run {
        /// Session config (.json or .toml); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Run record output; the index CSV is written next to it.
        #[arg(long, default_value = "run.json")]
        out: PathBuf,
    },
    /// Sweep seeds x scorers x protocols.
    Grid {
        /// Grid config (.json or .toml); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Curves, summary and timing CSVs from a directory of run records.
    Report {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Protocol the Jaccard curves compare against.
        #[arg(long, default_value = "AL_FT")]
        reference: Protocol,
    },
    /// Start the HTTP annotation service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Write a synthetic dataset as an embedding file plus manifest.
    Synth {
        /// Generator settings (.json or .toml); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Dataset name, also the output file stem.
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Embedding file; requires --manifest.
    #[arg(long, requires = "manifest")]
    embeddings: Option<PathBuf>,
    #[arg(long, requires = "embeddings")]
    manifest: Option<PathBuf>,
    /// Synthetic generator settings used when no files are given.
    #[arg(long, conflicts_with = "embeddings")]
    synthetic: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self, root: Option<&Path>) -> Result<DatasetSource> {
        Ok(match (&self.embeddings, &self.manifest, &self.synthetic) {
            (Some(e), Some(m), _) => DatasetSource::Files {
                embeddings: resolve(root, e),
                manifest: resolve(root, m),
            },
            (_, _, Some(spec)) => DatasetSource::Synthetic(load_document(&resolve(root, spec))?),
            _ => {
                info!("no dataset given, using the default synthetic benchmark");
                DatasetSource::Synthetic(SyntheticSpec::default())
            }
        })
    }
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(root: Option<&Path>, path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => load_document(&resolve(root, p)),
        None => Ok(T::default()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let root = cli.data_root.as_deref();
    match cli.command {
        Command::Run { config, data, out } => {
            let config: SessionConfig = load_or_default(root, &config)?;
            let out = resolve(root, &out);
            let record = commands::run(&config, &data.source(root)?, &out)?;
            if let Some(acc) = record.final_accuracy {
                println!("final accuracy {acc:.4} with {} labels", record.labeled.len());
            }
            if record.truncated {
                warn!("the pool ran out before the budget was spent");
            }
            commands::write_timing_table(io::stdout().lock(), &timing_table(&record))
                .map_err(|e| CliError::io("<stdout>", e))?;
            println!("wrote {}", out.display());
        }
        Command::Grid { config, data, out } => {
            let grid: GridConfig = load_or_default(root, &config)?;
            let out = resolve(root, &out);
            let outcome = commands::grid(&grid, &data.source(root)?, &out)?;
            println!(
                "{} cells run, {} reused, {} skipped; records in {}",
                outcome.ran.len(),
                outcome.reused.len(),
                outcome.skipped.len(),
                out.display()
            );
        }
        Command::Report { runs, out, reference } => {
            let outcome = commands::report(&resolve(root, &runs), &resolve(root, &out), reference)?;
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            if !outcome.gaps.is_empty() {
                println!("{} grid cells missing", outcome.gaps.len());
            }
        }
        Command::Serve { port, host } => {
            let root = root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            let state = AppState::open(&root)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("<runtime>", e))?;
            runtime
                .block_on(async {
                    let addr = SocketAddr::new(host, port);
                    let listener = tokio::net::TcpListener::bind(addr).await?;
                    info!("serving on http://{} with data root {}", listener.local_addr()?, root.display());
                    serve(listener, state).await
                })
                .map_err(|e| CliError::io("<server>", e))?;
        }
        Command::Synth { spec, out, name } => {
            let spec: SyntheticSpec = load_or_default(root, &spec)?;
            let (emb, manifest) = commands::synth(&spec, &resolve(root, &out), name.as_deref())?;
            println!("wrote {} and {}", emb.display(), manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
