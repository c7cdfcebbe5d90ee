//! Command-line runner and HTTP annotation service.
//!
//! The binary `prepal` exposes `run`, `grid`, `report`, `serve` and
//! `synth`; everything it does is available from this library so that the
//! service and the benchmark path can be compared in tests.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;

pub use error::{CliError, Result};
