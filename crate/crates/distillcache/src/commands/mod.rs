//! The subcommands. Each returns an [`Output`]: a JSON report (deterministic
//! for a given config and seed) plus, separately, wall-clock timings and an
//! optional failure that decides the exit code after the report is printed.

pub mod bench;
pub mod cache;
pub mod eval;
pub mod losscheck;
pub mod manifest;
pub mod verify;

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug)]
pub struct Output {
    pub command: &'static str,
    pub report: Value,
    /// Wall-clock measurements, kept apart from the reproducible payload.
    pub timing: Option<Value>,
    /// A failure detected after the report was assembled (gradient check).
    pub failure: Option<CliError>,
}

impl Output {
    pub fn new(command: &'static str, report: impl Serialize) -> CliResult<Self> {
        let report = serde_json::to_value(report).map_err(|e| CliError::input(format!("serializing {command} report: {e}")))?;
        Ok(Output { command, report, timing: None, failure: None })
    }

    pub fn with_timing(mut self, timer: &Timer) -> Self {
        self.timing = Some(json!({ "seconds": timer.seconds() }));
        self
    }

    pub fn exit_code(&self) -> u8 {
        self.failure.as_ref().map_or(crate::error::exit::OK, CliError::exit_code)
    }

    /// The printed document: the report, with timings under `timing`.
    pub fn document(&self) -> Value {
        let mut doc = self.report.clone();
        if let (Some(t), Value::Object(map)) = (&self.timing, &mut doc) {
            map.insert("timing".into(), t.clone());
        }
        doc
    }
}

pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// JSON describing an error, printed in place of a report.
pub fn error_document(err: &CliError) -> Value {
    json!({ "error": err.to_string(), "exit_code": err.exit_code(), "offset": err.offset() })
}

/// Pretty JSON with a trailing newline, written atomically enough for
/// reports (a single `fs::write`).
pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Copies the printed document into `report_dir/<command>.json` when a
/// report directory is configured.
pub fn save_report(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    match &cfg.report_dir {
        Some(dir) => write_json(&dir.join(format!("{}.json", out.command)), &out.document()),
        None => Ok(()),
    }
}
