//! Seeded generator for a Borg-shaped one-hour workload.
//!
//! Jobs arrive uniformly over the span and finish inside it, run for at most
//! five minutes and
//! request memory fractions concentrated near zero with a thin tail. A small
//! share of jobs allocates more than it advertises.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{parse_canonical_csv, sort_records, RawJobRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub jobs: usize,
    pub span_s: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Mean of the exponential body of the assigned-memory distribution.
    pub mean_frac: f64,
    /// Fractions are truncated to this value.
    pub max_frac: f64,
    /// Share of jobs whose maximum usage exceeds their assigned memory.
    pub overuse_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            jobs: 700,
            span_s: 3600.0,
            min_duration_s: 5.0,
            max_duration_s: 300.0,
            mean_frac: 0.08,
            max_frac: 0.3,
            overuse_share: 0.066,
            seed: 17,
        }
    }
}

/// The trace generated by [`SyntheticConfig::default`], in canonical CSV.
pub const BUNDLED_TRACE_CSV: &str = include_str!("../../data/synthetic_trace.csv");

pub fn bundled_trace() -> Vec<RawJobRecord> {
    parse_canonical_csv(BUNDLED_TRACE_CSV.as_bytes())
        .expect("bundled trace parses")
        .records
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<RawJobRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let body = Exp::new(1.0 / cfg.mean_frac).expect("mean_frac must be positive");
    let span_ms = (cfg.span_s * 1000.0) as u64;
    let mut records: Vec<RawJobRecord> = (0..cfg.jobs)
        .map(|i| {
            let duration_s = rng.random_range(cfg.min_duration_s..=cfg.max_duration_s);
            let duration_ms = (duration_s * 1000.0).round() as u64;
            let submit_ms = rng.random_range(0..=span_ms.saturating_sub(duration_ms));
            let assigned = round6(body.sample(&mut rng).clamp(1e-4, cfg.max_frac));
            let max = if rng.random_bool(cfg.overuse_share) {
                round6((assigned * rng.random_range(1.1..1.6)).min(cfg.max_frac.max(assigned)))
            } else {
                round6(assigned * rng.random_range(0.5..=1.0))
            };
            RawJobRecord {
                job_id: format!("job-{i:04}"),
                submit_ms,
                duration_ms,
                assigned_mem_frac: assigned,
                max_mem_frac: max,
            }
        })
        .collect();
    sort_records(&mut records);
    records
}
