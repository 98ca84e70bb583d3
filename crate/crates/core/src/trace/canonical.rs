use std::collections::HashSet;
use std::io::{Read, Write};

use super::{seconds_to_ms, sort_records, ParsedTrace, RawJobRecord, Rejected, TraceError};

const HEADER: [&str; 5] = [
    "job_id",
    "submit_s",
    "duration_s",
    "assigned_mem_frac",
    "max_mem_frac",
];

/// Parses the canonical trace CSV: a header row followed by
/// `job_id,submit_s,duration_s,assigned_mem_frac,max_mem_frac` rows.
///
/// Rows with a negative duration are skipped and reported in
/// [`ParsedTrace::rejected`]; any other malformed row fails the parse.
pub fn parse_canonical_csv<R: Read>(source: R) -> Result<ParsedTrace, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let mut out = ParsedTrace::default();
    let mut seen = HashSet::new();
    let mut header_seen = false;

    for row in reader.records() {
        let row = row.map_err(|e| TraceError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        if !header_seen {
            if row.iter().ne(HEADER.iter().copied()) {
                return Err(TraceError::Malformed {
                    line,
                    reason: format!("expected header {}", HEADER.join(",")),
                });
            }
            header_seen = true;
            continue;
        }
        let malformed = |reason: String| TraceError::Malformed { line, reason };
        if row.len() != HEADER.len() {
            return Err(malformed(format!(
                "expected {} fields, found {}",
                HEADER.len(),
                row.len()
            )));
        }
        let number = |idx: usize| -> Result<f64, TraceError> {
            let v: f64 = row[idx].parse().map_err(|_| {
                malformed(format!("{}: not a number: {:?}", HEADER[idx], &row[idx]))
            })?;
            if !v.is_finite() {
                return Err(malformed(format!("{}: not finite", HEADER[idx])));
            }
            Ok(v)
        };
        let job_id = row[0].to_owned();
        if job_id.is_empty() {
            return Err(malformed("empty job_id".into()));
        }
        let submit = number(1)?;
        let duration = number(2)?;
        let assigned = number(3)?;
        let max = number(4)?;
        if submit < 0.0 {
            return Err(malformed(format!("negative submit time {submit}")));
        }
        for (idx, frac) in [(3, assigned), (4, max)] {
            if !(0.0..=1.0).contains(&frac) {
                return Err(malformed(format!(
                    "{} = {frac} outside [0, 1]",
                    HEADER[idx]
                )));
            }
        }
        if duration < 0.0 {
            log::warn!("line {line}: job {job_id} rejected: negative duration {duration}");
            out.rejected.push(Rejected {
                line,
                reason: format!("job {job_id}: negative duration {duration}"),
            });
            continue;
        }
        if !seen.insert(job_id.clone()) {
            return Err(TraceError::DuplicateJob { line, job_id });
        }
        out.records.push(RawJobRecord {
            job_id,
            submit_ms: seconds_to_ms(submit),
            duration_ms: seconds_to_ms(duration),
            assigned_mem_frac: assigned,
            max_mem_frac: max,
        });
    }
    sort_records(&mut out.records);
    Ok(out)
}

pub fn write_canonical_csv<W: Write>(records: &[RawJobRecord], sink: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| TraceError::Io(e.into());
    w.write_record(HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.job_id.clone(),
            (r.submit_ms as f64 / 1000.0).to_string(),
            (r.duration_ms as f64 / 1000.0).to_string(),
            r.assigned_mem_frac.to_string(),
            r.max_mem_frac.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
