use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Every report carries what is needed to re-run it.
#[derive(Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub inputs: Value,
    pub config: Value,
    pub result: Value,
}

impl Report {
    pub fn new(command: &'static str, seed: Option<u64>, inputs: Value, config: Value, result: impl Serialize) -> Self {
        Self {
            tool: "agetrace",
            version: agetrace_version(),
            command,
            seed,
            inputs,
            config,
            result: serde_json::to_value(result).expect("report result serializes"),
        }
    }

    pub fn emit(&self, out: Option<&Path>) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        match out {
            Some(p) => write_text(p, &text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

pub fn agetrace_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
