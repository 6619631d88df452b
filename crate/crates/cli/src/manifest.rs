// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FILE_NAME: &str = "manifest.json";

/// Everything needed to rerun a command: the subcommand and its fully
/// resolved `key = value` settings. `settings` written back as a config file
/// reproduces the run's CSV outputs byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub settings: BTreeMap<String, String>,
    /// Command-specific detail (resolved training config, data sizes, ...).
    #[serde(default)]
    pub detail: serde_json::Value,
    pub outputs: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, settings: BTreeMap<String, String>, started_unix_ms: u128) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            settings,
            detail: serde_json::Value::Null,
            outputs: Vec::new(),
            started_unix_ms,
            finished_unix_ms: 0,
        }
    }

    pub fn write(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.finished_unix_ms = now_ms();
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Other(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Reads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = if path.is_dir() { path.join(FILE_NAME) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", file.display())))
    }

    /// The settings as a config file.
    pub fn to_config(&self) -> String {
        let mut s = format!("# {} {}\n", self.tool, self.command);
        for (k, v) in &self.settings {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
