use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// Everything needed to re-run a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub command: &'static str,
    pub config: Value,
    pub seed: u64,
    pub version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_unix_ms: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_unix_ms: Option<u128>,
    pub outputs: Vec<String>,
    /// Free-form results and derived settings (scale factors, stop reason).
    pub details: Value,
}

/// The command line after `--config` expansion.
pub static EXPANDED_ARGS: OnceLock<Vec<String>> = OnceLock::new();

pub fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &'static str, config: &impl Serialize, seed: u64, deterministic: bool) -> Self {
        Self {
            command_line: EXPANDED_ARGS.get().cloned().unwrap_or_else(|| std::env::args().collect()),
            command,
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seed,
            version: env!("CARGO_PKG_VERSION"),
            started_unix_ms: (!deterministic).then(unix_ms),
            finished_unix_ms: None,
            outputs: Vec::new(),
            details: Value::Object(Default::default()),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        if let Value::Object(map) = &mut self.details {
            map.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(mut self, path: &Path) -> Result<(), CliError> {
        if self.started_unix_ms.is_some() {
            self.finished_unix_ms = Some(unix_ms());
        }
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::output(path.display(), e))?;
        fs::write(path, text + "\n").map_err(|e| CliError::output(path.display(), e))
    }
}
