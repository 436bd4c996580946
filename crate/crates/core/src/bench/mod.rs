//! Benchmark and stress harness: many threads interning every substring of
//! a string of distinct characters.

mod run;
mod workload;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::error::AtomError;

pub use run::{process_cpu_time, run_bench, AuditSummary, BenchReport, StallProbe};
pub use workload::{expected_unique, substring_workload, SubstringWorkload, MAX_ALPHABET};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Atom(#[from] AtomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchMode {
    /// Threads drop every atom after interning it; the collector reclaims.
    AgcActive,
    /// All atoms are interned up front; threads only look them up.
    Preallocated,
    /// Random intern/drop with arena-held handles and a looping collector.
    Churn,
    /// Intern latency while the collector's destroy phase is stalled.
    StallProbe,
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMode::AgcActive => "agc-active",
            BenchMode::Preallocated => "preallocated",
            BenchMode::Churn => "churn",
            BenchMode::StallProbe => "stall-probe",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Thread counts to sweep; one set of rows per entry.
    pub threads: Vec<usize>,
    pub alphabet: usize,
    pub mode: BenchMode,
    pub reps: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// How long stall-probe mode holds the destroy phase.
    pub stall: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            threads: vec![1],
            alphabet: 1000,
            mode: BenchMode::Preallocated,
            reps: 3,
            seed: 42,
            out: None,
            stall: Duration::from_millis(200),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.threads.is_empty() || self.threads.contains(&0) {
            return Err(BenchError::Config("thread counts must be at least 1".into()));
        }
        if self.alphabet == 0 || self.alphabet > MAX_ALPHABET {
            return Err(BenchError::Config(format!(
                "alphabet size must be in 1..={MAX_ALPHABET}, got {}",
                self.alphabet
            )));
        }
        if self.reps == 0 {
            return Err(BenchError::Config("reps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One measurement. Times are in seconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub row: usize,
    pub threads: usize,
    pub process_s: f64,
    pub wall_s: f64,
    pub agc_invocations: u64,
    pub reclaimed_bytes: u64,
    pub agc_s: f64,
}

pub const CSV_HEADER: &str = "row,threads,process_s,wall_s,agc_invocations,reclaimed_bytes,agc_s";

/// Writes `rows` as CSV with a header line.
pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<(), BenchError> {
    if rows.is_empty() {
        return Err(BenchError::Invariant("no rows to write".into()));
    }
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[BenchRow], path: &Path) -> Result<(), BenchError> {
    if rows.is_empty() {
        return Err(BenchError::Invariant("no rows to write".into()));
    }
    write_csv(rows, std::fs::File::create(path)?)
}
