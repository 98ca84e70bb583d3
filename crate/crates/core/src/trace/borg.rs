//! Adapter for the public 2011 cluster-data tables.
//!
//! Each task (job id + task index) becomes one record. Its duration is the
//! span from the last SCHEDULE event to the first FINISH event after it;
//! tasks that never finish are dropped. Memory fractions are the maxima over
//! all usage samples of the assigned-memory and maximum-memory columns; tasks
//! without usage samples are dropped as well.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{sort_records, ParsedTrace, RawJobRecord, Rejected, TraceError};

const EVENT_SUBMIT: u32 = 0;
const EVENT_SCHEDULE: u32 = 1;
const EVENT_FINISH: u32 = 4;

/// Column indices into the task-event and task-usage tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BorgColumns {
    pub event_time: usize,
    pub event_job_id: usize,
    pub event_task_index: usize,
    pub event_type: usize,
    pub usage_job_id: usize,
    pub usage_task_index: usize,
    pub usage_assigned_mem: usize,
    pub usage_max_mem: usize,
    /// Timestamp ticks per second (microseconds in the public trace).
    pub ticks_per_second: u64,
}

impl Default for BorgColumns {
    fn default() -> Self {
        Self {
            event_time: 0,
            event_job_id: 2,
            event_task_index: 3,
            event_type: 5,
            usage_job_id: 2,
            usage_task_index: 3,
            usage_assigned_mem: 7,
            usage_max_mem: 10,
            ticks_per_second: 1_000_000,
        }
    }
}

#[derive(Default)]
struct TaskEvents {
    submit: Option<u64>,
    last_schedule: Option<u64>,
    run: Option<(u64, u64)>,
}

#[derive(Default)]
struct TaskUsage {
    assigned: f64,
    max: f64,
}

/// Reads `task_events/` and `task_usage/` shards (`.csv` or `.csv.gz`) under
/// `dir`. Shards are read in file-name order.
pub fn parse_borg_tables(dir: &Path, cols: &BorgColumns) -> Result<ParsedTrace, TraceError> {
    let events = open_shards(&dir.join("task_events"))?;
    let usage = open_shards(&dir.join("task_usage"))?;
    parse_borg_readers(events, usage, cols)
}

fn open_shards(dir: &Path) -> Result<Vec<Box<dyn Read>>, TraceError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| TraceError::Borg(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            name.ends_with(".csv") || name.ends_with(".csv.gz")
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let file = BufReader::new(File::open(&p)?);
            let reader: Box<dyn Read> = if p.extension().is_some_and(|e| e == "gz") {
                Box::new(GzDecoder::new(file))
            } else {
                Box::new(file)
            };
            Ok(reader)
        })
        .collect()
}

fn field(row: &csv::StringRecord, idx: usize, line: u64) -> Result<&str, TraceError> {
    row.get(idx).ok_or_else(|| TraceError::Malformed {
        line,
        reason: format!("missing column {idx}"),
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: u64, what: &str) -> Result<T, TraceError> {
    s.parse().map_err(|_| TraceError::Malformed {
        line,
        reason: format!("{what}: not a number: {s:?}"),
    })
}

pub fn parse_borg_readers(
    events: impl IntoIterator<Item = impl Read>,
    usage: impl IntoIterator<Item = impl Read>,
    cols: &BorgColumns,
) -> Result<ParsedTrace, TraceError> {
    let mut tasks: HashMap<(String, String), TaskEvents> = HashMap::new();
    for shard in events {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(shard);
        for row in reader.records() {
            let row = row.map_err(|e| TraceError::Borg(e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line());
            let kind: u32 = parse_num(field(&row, cols.event_type, line)?, line, "event type")?;
            if !matches!(kind, EVENT_SUBMIT | EVENT_SCHEDULE | EVENT_FINISH) {
                continue;
            }
            let time: u64 = parse_num(field(&row, cols.event_time, line)?, line, "timestamp")?;
            let key = (
                field(&row, cols.event_job_id, line)?.to_owned(),
                field(&row, cols.event_task_index, line)?.to_owned(),
            );
            let task = tasks.entry(key).or_default();
            match kind {
                EVENT_SUBMIT => {
                    task.submit = Some(task.submit.map_or(time, |t| t.min(time)));
                }
                EVENT_SCHEDULE => task.last_schedule = Some(time),
                _ => {
                    if let (None, Some(start)) = (task.run, task.last_schedule) {
                        if time >= start {
                            task.run = Some((start, time));
                        }
                    }
                }
            }
        }
    }

    let mut mem: HashMap<(String, String), TaskUsage> = HashMap::new();
    for shard in usage {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(shard);
        for row in reader.records() {
            let row = row.map_err(|e| TraceError::Borg(e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line());
            let key = (
                field(&row, cols.usage_job_id, line)?.to_owned(),
                field(&row, cols.usage_task_index, line)?.to_owned(),
            );
            let assigned = field(&row, cols.usage_assigned_mem, line)?;
            let max = field(&row, cols.usage_max_mem, line)?;
            let entry = mem.entry(key).or_default();
            if !assigned.is_empty() {
                entry.assigned = entry
                    .assigned
                    .max(parse_num(assigned, line, "assigned memory")?);
            }
            if !max.is_empty() {
                entry.max = entry.max.max(parse_num(max, line, "maximum memory")?);
            }
        }
    }

    let ticks = cols.ticks_per_second as u128;
    let to_ms = |t: u64| (t as u128 * 1000 / ticks) as u64;
    let mut out = ParsedTrace::default();
    for (key, task) in tasks {
        let Some((start, finish)) = task.run else {
            continue;
        };
        let Some(usage) = mem.get(&key) else { continue };
        let job_id = format!("{}-{}", key.0, key.1);
        if !(0.0..=1.0).contains(&usage.assigned) || !(0.0..=1.0).contains(&usage.max) {
            out.rejected.push(Rejected {
                line: 0,
                reason: format!("task {job_id}: memory fraction outside [0, 1]"),
            });
            continue;
        }
        let submit = task.submit.unwrap_or(start).min(start);
        out.records.push(RawJobRecord {
            job_id,
            submit_ms: to_ms(submit),
            duration_ms: to_ms(finish) - to_ms(start),
            assigned_mem_frac: usage.assigned,
            max_mem_frac: usage.max,
        });
    }
    sort_records(&mut out.records);
    Ok(out)
}
