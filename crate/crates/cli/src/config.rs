//! Config documents (JSON or TOML, chosen by extension) and path handling.

use std::fs;
use std::path::{Path, PathBuf};

use prepal_core::acquisition::Strategy;
use prepal_core::protocol::{Protocol, SessionConfig};
use prepal_core::Error as CoreError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable naming the directory relative paths start from.
pub const DATA_ROOT_ENV: &str = "PREPAL_DATA_ROOT";

/// `path` itself when absolute or when there is no root, else `root/path`.
pub fn resolve(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

/// Parses a JSON document, naming the offending field path on failure.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.into_inner().to_string()
        } else {
            format!("{path}: {}", e.into_inner())
        }
    })
}

/// Reads a `.toml` or `.json` document.
pub fn load_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| e.to_string()),
        Some("json") => from_json_str(&text),
        other => Err(format!(
            "unsupported extension {:?}, expected .json or .toml",
            other.unwrap_or("")
        )),
    };
    parsed.map_err(|reason| CliError::Config {
        path: path.to_path_buf(),
        reason,
    })
}

/// A sweep over seeds, scorers and protocols around one base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub base: SessionConfig,
    pub seeds: Vec<u64>,
    pub scorers: Vec<Strategy>,
    pub protocols: Vec<Protocol>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            base: SessionConfig::default(),
            seeds: (0..5).collect(),
            scorers: Strategy::ALL.to_vec(),
            protocols: Protocol::ALL.to_vec(),
        }
    }
}

impl GridConfig {
    /// One config per cell, plus the cells that cannot run (a scorer the
    /// protocol's loop model does not support) as `protocol/scorer`.
    pub fn cells(&self, pool_size: usize) -> Result<(Vec<SessionConfig>, Vec<String>)> {
        let mut cells = Vec::new();
        let mut skipped = Vec::new();
        for &protocol in &self.protocols {
            for &acquisition in &self.scorers {
                for &seed in &self.seeds {
                    let config = SessionConfig {
                        protocol,
                        acquisition,
                        seed,
                        ..self.base.clone()
                    };
                    match config.validate(pool_size) {
                        Ok(()) => cells.push(config),
                        Err(CoreError::InvalidArgument {
                            field: "acquisition",
                            ..
                        }) => {
                            let cell = format!("{protocol}/{acquisition}");
                            if !skipped.contains(&cell) {
                                skipped.push(cell);
                            }
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        Ok((cells, skipped))
    }
}
