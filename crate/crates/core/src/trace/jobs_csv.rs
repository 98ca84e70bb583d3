use std::io::{Read, Write};

use super::{JobSpec, TraceError};
use crate::csvio;

const HEADER: [&str; 8] = [
    "job_id",
    "submit_ms",
    "duration_ms",
    "kind",
    "requested_mem",
    "actual_mem",
    "declared_epc_pages",
    "actual_epc_pages",
];

/// Writes the materialized workload, one job per row.
pub fn write_jobs_csv<W: Write>(jobs: &[JobSpec], sink: W) -> Result<(), TraceError> {
    csvio::write_rows(&HEADER, jobs, sink).map_err(|e| TraceError::Io(e.into()))
}

pub fn read_jobs_csv<R: Read>(source: R) -> Result<Vec<JobSpec>, TraceError> {
    let jobs: Vec<JobSpec> = csvio::read_rows(&HEADER, source)
        .map_err(|reason| TraceError::Malformed { line: 0, reason })?;
    for job in &jobs {
        job.check_invariants()
            .map_err(|reason| TraceError::Malformed { line: 0, reason })?;
    }
    Ok(jobs)
}
