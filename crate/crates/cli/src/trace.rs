//! Trace persistence: JSON Lines records plus an optional per-iteration CSV.
//!
//! A trace is one `config` record, then one `iteration` record per step
//! (step 0 is the starting point), then extra command-specific records, then
//! one `summary` record. Within a schema version the field set only grows.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "iteration,residual,inner_iters,time_ns";

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: f64,
    pub inner_iters: usize,
    /// Wall time of this step.
    pub time_ns: u64,
    /// Time since the run started, taken at the end of this step.
    pub elapsed_ns: u64,
    /// Per-phase wall time, keyed by phase name.
    pub phases: BTreeMap<String, u64>,
    /// Command-specific diagnostics.
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record<'a> {
    Config {
        schema_version: u32,
        command: &'a str,
        config: &'a Value,
    },
    Iteration(&'a IterationRecord),
    Data {
        name: &'a str,
        value: &'a Value,
    },
    Summary {
        total_ns: u64,
        final_residual: Option<f64>,
        success: bool,
        status: &'a str,
    },
}

/// Collects a run's records; `elapsed_ns` is taken from one monotonic clock.
#[derive(Debug)]
pub struct Trace {
    command: String,
    config: Value,
    start: Instant,
    iterations: Vec<IterationRecord>,
    data: Vec<(String, Value)>,
}

impl Trace {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            start: Instant::now(),
            iterations: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Records a step, filling `elapsed_ns` and keeping it non-decreasing.
    pub fn push(&mut self, mut record: IterationRecord) {
        let now = self.start.elapsed().as_nanos() as u64;
        let floor = self.iterations.last().map_or(0, |r| r.elapsed_ns);
        record.elapsed_ns = now.max(floor);
        self.iterations.push(record);
    }

    pub fn push_data(&mut self, name: &str, value: Value) {
        self.data.push((name.to_string(), value));
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    /// Serializes the whole trace as JSON Lines.
    pub fn to_jsonl(&self, success: bool, status: &str) -> Result<String> {
        let mut out = String::new();
        let mut line = |rec: &Record| -> Result<()> {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
            Ok(())
        };
        line(&Record::Config {
            schema_version: SCHEMA_VERSION,
            command: &self.command,
            config: &self.config,
        })?;
        for it in &self.iterations {
            line(&Record::Iteration(it))?;
        }
        for (name, value) in &self.data {
            line(&Record::Data { name, value })?;
        }
        let total = self
            .elapsed_ns()
            .max(self.iterations.last().map_or(0, |r| r.elapsed_ns));
        line(&Record::Summary {
            total_ns: total,
            final_residual: self.iterations.last().map(|r| r.residual),
            success,
            status,
        })?;
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for it in &self.iterations {
            // Same shortest round-trip float text as the JSON records.
            let residual = serde_json::to_string(&it.residual).unwrap_or_else(|_| "null".into());
            out.push_str(&format!("{},{},{},{}\n", it.iteration, residual, it.inner_iters, it.time_ns));
        }
        out
    }
}

/// Writes to `path`, or to stdout when `None`.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(format!("writing {}", p.display()), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::io("writing stdout", e))
        }
    }
}
