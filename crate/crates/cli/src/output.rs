use std::path::{Path, PathBuf};

use ggp_core::GgpError;
use serde::Serialize;
use serde_json::{json, Value};

/// Command failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Core(GgpError),
    /// A check ran and its threshold was breached.
    Check { message: String, report: Value },
}

impl From<GgpError> for CliError {
    fn from(e: GgpError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(GgpError::Numerical(_)) => 2,
            CliError::Core(_) => 1,
            CliError::Check { .. } => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            CliError::Core(e) => json!({
                "error": { "kind": e.kind(), "exit_code": self.exit_code(), "message": e.to_string() }
            }),
            CliError::Check { message, report } => json!({
                "error": { "kind": "check", "exit_code": 3, "message": message, "report": report }
            }),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(GgpError::Io { path: path.display().to_string(), source: e })
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON-serializable output");
    write_text(path, &(text + "\n"))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// Prints to stdout; a closed pipe is not an error.
pub fn print_json<T: Serialize>(value: &T) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("JSON-serializable output");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub dataset_fingerprint: Option<String>,
    pub artifacts: Vec<PathBuf>,
    pub duration_seconds: f64,
    pub metrics: Value,
}
