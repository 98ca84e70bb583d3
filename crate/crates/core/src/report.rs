//! Aggregates over run outcomes and the data blocks behind the evaluation
//! figures.
//!
//! Everything here works on rows as they are read back from an artifact
//! directory, so a report computed from disk equals one computed in memory.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cluster::{GIB, MIB};
use crate::engine::{JobStatus, OutcomeRow, PendingPoint};
use crate::ids::PodId;
use crate::trace::{JobKind, JobSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub waiting_ms: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WaitingCdf {
    pub points: Vec<CdfPoint>,
    pub started: usize,
    pub killed: usize,
    pub unfinished: usize,
}

fn waiting_of(row: &OutcomeRow) -> Option<u64> {
    row.start_ms.map(|s| s - row.submit_ms)
}

/// Empirical CDF of waiting times over started jobs, one point per distinct
/// waiting time. Killed and unfinished jobs are counted separately.
pub fn waiting_cdf<'a>(rows: impl IntoIterator<Item = &'a OutcomeRow>) -> WaitingCdf {
    let mut cdf = WaitingCdf::default();
    let mut waits = Vec::new();
    for row in rows {
        match row.status {
            JobStatus::Killed => cdf.killed += 1,
            JobStatus::Unfinished => cdf.unfinished += 1,
            JobStatus::Completed => waits.extend(waiting_of(row)),
        }
    }
    waits.sort_unstable();
    cdf.started = waits.len();
    let n = waits.len() as f64;
    for (i, &w) in waits.iter().enumerate() {
        if waits.get(i + 1) != Some(&w) {
            cdf.points.push(CdfPoint {
                waiting_ms: w,
                fraction: (i + 1) as f64 / n,
            });
        }
    }
    cdf
}

/// Sum of `finish - submit` over completed jobs.
pub fn turnaround_sum(rows: &[OutcomeRow]) -> u64 {
    rows.iter()
        .filter(|r| r.status == JobStatus::Completed)
        .filter_map(|r| r.finish_ms.map(|f| f - r.submit_ms))
        .sum()
}

/// Sum of trace durations of the jobs that completed.
pub fn trace_duration_sum(rows: &[OutcomeRow], jobs: &[JobSpec]) -> u64 {
    let durations: HashMap<&PodId, u64> = jobs.iter().map(|j| (&j.job_id, j.duration_ms)).collect();
    rows.iter()
        .filter(|r| r.status == JobStatus::Completed)
        .filter_map(|r| durations.get(&r.job_id))
        .sum()
}

pub fn total_waiting(rows: &[OutcomeRow]) -> u64 {
    rows.iter().filter_map(waiting_of).sum()
}

/// Mean waiting time of started jobs accepted by `keep`; `None` when no such
/// job started.
pub fn mean_waiting(rows: &[OutcomeRow], keep: impl Fn(&OutcomeRow) -> bool) -> Option<f64> {
    let waits: Vec<u64> = rows
        .iter()
        .filter(|r| keep(r))
        .filter_map(waiting_of)
        .collect();
    if waits.is_empty() {
        return None;
    }
    Some(waits.iter().sum::<u64>() as f64 / waits.len() as f64)
}

/// Finish time of the last completed job.
pub fn makespan(rows: &[OutcomeRow]) -> u64 {
    rows.iter()
        .filter(|r| r.status == JobStatus::Completed)
        .filter_map(|r| r.finish_ms)
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub jobs: usize,
    pub completed: usize,
    pub killed: usize,
    pub unfinished: usize,
    pub makespan_ms: u64,
    pub total_waiting_ms: u64,
    pub total_turnaround_ms: u64,
    pub trace_duration_ms: u64,
    pub mean_waiting_ms: Option<f64>,
    /// Mean waiting of started jobs that are not malicious.
    pub honest_mean_waiting_ms: Option<f64>,
}

pub fn summarize(rows: &[OutcomeRow], jobs: &[JobSpec]) -> Summary {
    let count = |s| rows.iter().filter(|r| r.status == s).count();
    Summary {
        jobs: rows.len(),
        completed: count(JobStatus::Completed),
        killed: count(JobStatus::Killed),
        unfinished: count(JobStatus::Unfinished),
        makespan_ms: makespan(rows),
        total_waiting_ms: total_waiting(rows),
        total_turnaround_ms: turnaround_sum(rows),
        trace_duration_ms: trace_duration_sum(rows, jobs),
        mean_waiting_ms: mean_waiting(rows, |_| true),
        honest_mean_waiting_ms: mean_waiting(rows, |r| r.kind != JobKind::MaliciousSgx),
    }
}

/// Lower bucket edges in bytes, one list per job class. Bucket `i` covers
/// `[edges[i], edges[i + 1])` and the last bucket is open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketEdges {
    pub sgx: Vec<u64>,
    pub standard: Vec<u64>,
}

impl Default for BucketEdges {
    /// 0 then powers of two: 1 to 64 MiB for SGX, 1 to 16 GiB for standard.
    fn default() -> Self {
        Self {
            sgx: std::iter::once(0)
                .chain((0..=6).map(|p| (1 << p) * MIB))
                .collect(),
            standard: std::iter::once(0)
                .chain((0..=4).map(|p| (1 << p) * GIB))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBucket {
    pub sgx: bool,
    pub lo_bytes: u64,
    pub hi_bytes: Option<u64>,
    pub count: usize,
    pub mean_ms: Option<f64>,
    /// Half-width of the 95% confidence interval of the mean.
    pub ci_half_width_ms: Option<f64>,
}

/// Mean and 95% CI half-width. Student's t is used below 30 samples, the
/// normal quantile from there on. A single sample has no interval.
pub fn mean_ci95(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let crit = if n < 30 {
        StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975)
    } else {
        1.96
    };
    (Some(mean), Some(crit * var.sqrt() / (n as f64).sqrt()))
}

/// Waiting time per requested-memory bucket, SGX buckets first. Malicious
/// jobs are grouped with SGX jobs.
pub fn waiting_by_memory(
    rows: &[OutcomeRow],
    jobs: &[JobSpec],
    edges: &BucketEdges,
) -> Vec<MemoryBucket> {
    let requested: HashMap<&PodId, u64> =
        jobs.iter().map(|j| (&j.job_id, j.requested_mem)).collect();
    let mut out = Vec::new();
    for (sgx, edges) in [(true, &edges.sgx), (false, &edges.standard)] {
        let mut sorted = edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); sorted.len()];
        for row in rows.iter().filter(|r| r.kind.is_sgx() == sgx) {
            let (Some(w), Some(&mem)) = (waiting_of(row), requested.get(&row.job_id)) else {
                continue;
            };
            let idx = sorted.partition_point(|&e| e <= mem);
            if idx > 0 {
                groups[idx - 1].push(w as f64);
            }
        }
        for (i, group) in groups.iter().enumerate() {
            let (mean_ms, ci_half_width_ms) = mean_ci95(group);
            out.push(MemoryBucket {
                sgx,
                lo_bytes: sorted[i],
                hi_bytes: sorted.get(i + 1).copied(),
                count: group.len(),
                mean_ms,
                ci_half_width_ms,
            });
        }
    }
    out
}

/// What a figure renderer needs from one sweep point.
#[derive(Debug, Clone)]
pub struct PointData {
    pub label: String,
    pub outcomes: Vec<OutcomeRow>,
    pub pending: Vec<PendingPoint>,
    pub jobs: Vec<JobSpec>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |v| format!("{v:.3}"))
}

/// Renders gnuplot data blocks, one indexable block per point (blocks are
/// separated by two blank lines). Unknown figure numbers yield `None`.
pub fn render_figure(figure: u32, points: &[PointData], edges: &BucketEdges) -> Option<String> {
    let mut out = String::new();
    match figure {
        6 => {
            for p in points {
                let _ = writeln!(out, "# {}\n# time_s pending_epc_mib", p.label);
                for pt in &p.pending {
                    let _ = writeln!(
                        out,
                        "{:.3} {:.6}",
                        pt.time_ms as f64 / 1000.0,
                        pt.pending_epc_bytes as f64 / MIB as f64
                    );
                }
                out.push_str("\n\n");
            }
        }
        7 | 9 => {
            for p in points {
                // Figure 9 looks at honest jobs only.
                let cdf = if figure == 9 {
                    waiting_cdf(
                        p.outcomes
                            .iter()
                            .filter(|r| r.kind != JobKind::MaliciousSgx),
                    )
                } else {
                    waiting_cdf(&p.outcomes)
                };
                let _ = writeln!(
                    out,
                    "# {} started={} killed={} unfinished={}\n# waiting_s cumulative_fraction",
                    p.label, cdf.started, cdf.killed, cdf.unfinished
                );
                for pt in &cdf.points {
                    let _ = writeln!(
                        out,
                        "{:.3} {:.6}",
                        pt.waiting_ms as f64 / 1000.0,
                        pt.fraction
                    );
                }
                out.push_str("\n\n");
            }
        }
        8 => {
            for p in points {
                let _ = writeln!(
                    out,
                    "# {}\n# class lo_mib hi_mib count mean_s ci95_s",
                    p.label
                );
                for b in waiting_by_memory(&p.outcomes, &p.jobs, edges) {
                    let hi = b.hi_bytes.map_or_else(
                        || "inf".to_string(),
                        |h| format!("{}", h as f64 / MIB as f64),
                    );
                    let _ = writeln!(
                        out,
                        "{} {} {} {} {} {}",
                        if b.sgx { "sgx" } else { "standard" },
                        b.lo_bytes as f64 / MIB as f64,
                        hi,
                        b.count,
                        fmt_opt(b.mean_ms.map(|m| m / 1000.0)),
                        fmt_opt(b.ci_half_width_ms.map(|m| m / 1000.0)),
                    );
                }
                out.push_str("\n\n");
            }
        }
        10 => {
            let _ = writeln!(out, "# label total_turnaround_h trace_duration_h");
            for p in points {
                let s = summarize(&p.outcomes, &p.jobs);
                let _ = writeln!(
                    out,
                    "\"{}\" {:.6} {:.6}",
                    p.label,
                    s.total_turnaround_ms as f64 / 3.6e6,
                    s.trace_duration_ms as f64 / 3.6e6
                );
            }
        }
        _ => return None,
    }
    Some(out)
}
