//! Machine-readable record of one invocation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Version of every CSV layout the tool writes. Bumped whenever columns
/// change meaning or order.
pub const CSV_SCHEMAS: [(&str, u32); 4] = [("mean_norm", 1), ("trajectory", 1), ("sweep", 1), ("decay_estimate", 1)];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Inputs {
    /// Full command line after the program name.
    pub argv: Vec<String>,
    pub config_path: Option<String>,
    /// Verbatim config text, so a run can be repeated without the file.
    pub config_text: Option<String>,
    /// Effective values of every flag, defaults included.
    pub flags: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Inputs,
    pub seed: Option<u64>,
    pub exit_code: u8,
    pub results: Value,
    pub diagnostics: Value,
    pub csv_schemas: BTreeMap<String, u32>,
    pub outputs: Vec<String>,
    pub error: Option<ErrorInfo>,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(command: &str, inputs: Inputs, timing: Timing) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            inputs,
            seed: None,
            exit_code: 0,
            results: Value::Null,
            diagnostics: Value::Null,
            csv_schemas: CSV_SCHEMAS.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            outputs: Vec::new(),
            error: None,
            timing,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Io(format!("cannot write report {}: {e}", path.display())))
    }
}
