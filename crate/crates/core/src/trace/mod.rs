//! Trace ingestion and down-scaling.
//!
//! Records come either from the canonical CSV contract or from the raw
//! 2011 Borg tables. [`slice_and_sample`] cuts a time window and keeps every
//! n-th job; [`materialize`] turns memory fractions into byte and page
//! amounts and tags jobs as SGX-enabled.

mod borg;
mod canonical;
mod jobs_csv;
mod scaling;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::PodId;

pub use borg::{parse_borg_readers, parse_borg_tables, BorgColumns};
pub use canonical::{parse_canonical_csv, write_canonical_csv};
pub use jobs_csv::{read_jobs_csv, write_jobs_csv};
pub use scaling::{
    inject_malicious, materialize, slice_and_sample, tag_draw, MaliciousSpec, ScalingConfig,
};

/// One job as extracted from a trace. Times are integer milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawJobRecord {
    pub job_id: String,
    pub submit_ms: u64,
    pub duration_ms: u64,
    pub assigned_mem_frac: f64,
    pub max_mem_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JobKind {
    Standard,
    Sgx,
    MaliciousSgx,
}

impl JobKind {
    pub fn is_sgx(self) -> bool {
        !matches!(self, JobKind::Standard)
    }
}

/// A schedulable unit after scaling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: PodId,
    pub submit_ms: u64,
    pub duration_ms: u64,
    pub kind: JobKind,
    /// Advertised standard memory, in bytes.
    pub requested_mem: u64,
    /// Standard memory allocated at start, in bytes.
    pub actual_mem: u64,
    pub declared_epc_pages: u64,
    pub actual_epc_pages: u64,
}

impl JobSpec {
    pub fn check_invariants(&self) -> Result<(), String> {
        match self.kind {
            JobKind::Standard if self.declared_epc_pages != 0 || self.actual_epc_pages != 0 => {
                Err(format!("standard job {} carries EPC pages", self.job_id))
            }
            JobKind::Sgx | JobKind::MaliciousSgx if self.declared_epc_pages == 0 => {
                Err(format!("SGX job {} declares no EPC pages", self.job_id))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    CanonicalCsv,
    BorgTables,
}

/// A row the parser skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTrace {
    /// Sorted by (submit time, job id).
    pub records: Vec<RawJobRecord>,
    pub rejected: Vec<Rejected>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: duplicate job id {job_id}")]
    DuplicateJob { line: u64, job_id: String },
    #[error("borg tables: {0}")]
    Borg(String),
}

pub fn parse_trace(path: &std::path::Path, format: TraceFormat) -> Result<ParsedTrace, TraceError> {
    match format {
        TraceFormat::CanonicalCsv => {
            let file = std::fs::File::open(path)?;
            parse_canonical_csv(std::io::BufReader::new(file))
        }
        TraceFormat::BorgTables => parse_borg_tables(path, &BorgColumns::default()),
    }
}

pub(crate) fn sort_records(records: &mut [RawJobRecord]) {
    records.sort_by(|a, b| {
        a.submit_ms
            .cmp(&b.submit_ms)
            .then_with(|| a.job_id.cmp(&b.job_id))
    });
}

pub(crate) fn seconds_to_ms(seconds: f64) -> u64 {
    (seconds * 1000.0).round() as u64
}
