use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{seconds_to_ms, JobKind, JobSpec, RawJobRecord};
use crate::cluster::{DEFAULT_EPC_USABLE, GIB, PAGE_SIZE};
use crate::ids::PodId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub slice_start_s: f64,
    pub slice_end_s: f64,
    pub sampling_stride: usize,
    pub sgx_fraction: f64,
    /// Bytes per unit memory fraction for standard jobs.
    pub std_multiplier: u64,
    /// Bytes per unit memory fraction for SGX jobs.
    pub sgx_multiplier: u64,
    pub rng_seed: u64,
}

impl Default for ScalingConfig {
    /// One hour taken from the first day, one job in 1200.
    fn default() -> Self {
        Self {
            slice_start_s: 6480.0,
            slice_end_s: 10080.0,
            sampling_stride: 1200,
            sgx_fraction: 0.0,
            std_multiplier: 32 * GIB,
            sgx_multiplier: DEFAULT_EPC_USABLE,
            rng_seed: 0,
        }
    }
}

impl ScalingConfig {
    /// Keeps every record of an already sliced trace.
    pub fn passthrough(end_s: f64) -> Self {
        Self {
            slice_start_s: 0.0,
            slice_end_s: end_s,
            sampling_stride: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.slice_start_s >= 0.0 && self.slice_start_s < self.slice_end_s) {
            return Err(format!(
                "slice [{}, {}) is empty or negative",
                self.slice_start_s, self.slice_end_s
            ));
        }
        if self.sampling_stride == 0 {
            return Err("sampling_stride must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.sgx_fraction) {
            return Err(format!("sgx_fraction {} outside [0, 1]", self.sgx_fraction));
        }
        if self.std_multiplier == 0 || self.sgx_multiplier == 0 {
            return Err("memory multipliers must be positive".into());
        }
        Ok(())
    }
}

/// Keeps records submitted in `[slice_start, slice_end)`, re-bases their
/// submit times to the slice start and keeps every `sampling_stride`-th one.
pub fn slice_and_sample(records: &[RawJobRecord], cfg: &ScalingConfig) -> Vec<RawJobRecord> {
    let start = seconds_to_ms(cfg.slice_start_s);
    let end = seconds_to_ms(cfg.slice_end_s);
    records
        .iter()
        .filter(|r| (start..end).contains(&r.submit_ms))
        .step_by(cfg.sampling_stride.max(1))
        .map(|r| RawJobRecord {
            submit_ms: r.submit_ms - start,
            ..r.clone()
        })
        .collect()
}

/// Uniform draw in `[0, 1)` for the record at `index`. The stream position
/// depends only on `(seed, index)`, so a job's draw does not change when the
/// tagging threshold does.
pub fn tag_draw(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(index as u128 * 2);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn scale(frac: f64, multiplier: u64) -> u64 {
    (frac * multiplier as f64).round() as u64
}

pub fn materialize(records: &[RawJobRecord], cfg: &ScalingConfig) -> Vec<JobSpec> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let sgx = tag_draw(cfg.rng_seed, i as u64) < cfg.sgx_fraction;
            if sgx {
                let requested = scale(r.assigned_mem_frac, cfg.sgx_multiplier);
                let actual = scale(r.max_mem_frac, cfg.sgx_multiplier);
                JobSpec {
                    job_id: PodId::new(r.job_id.clone()),
                    submit_ms: r.submit_ms,
                    duration_ms: r.duration_ms,
                    kind: JobKind::Sgx,
                    requested_mem: requested,
                    actual_mem: actual,
                    // An SGX pod always asks for at least one page.
                    declared_epc_pages: requested.div_ceil(PAGE_SIZE).max(1),
                    actual_epc_pages: actual.div_ceil(PAGE_SIZE),
                }
            } else {
                JobSpec {
                    job_id: PodId::new(r.job_id.clone()),
                    submit_ms: r.submit_ms,
                    duration_ms: r.duration_ms,
                    kind: JobKind::Standard,
                    requested_mem: scale(r.assigned_mem_frac, cfg.std_multiplier),
                    actual_mem: scale(r.max_mem_frac, cfg.std_multiplier),
                    declared_epc_pages: 0,
                    actual_epc_pages: 0,
                }
            }
        })
        .collect()
}

/// Containers that declare a tiny EPC limit but allocate a large share of a
/// node's EPC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaliciousSpec {
    /// Defaults to the number of SGX nodes.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default = "one")]
    pub declared_pages: u64,
    pub use_fraction: f64,
    /// Defaults to the workload span (latest submit + duration).
    #[serde(default)]
    pub duration_s: Option<f64>,
}

fn one() -> u64 {
    1
}

impl MaliciousSpec {
    pub fn new(declared_pages: u64, use_fraction: f64) -> Self {
        Self {
            count: None,
            declared_pages,
            use_fraction,
            duration_s: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.use_fraction > 0.0 && self.use_fraction <= 1.0) {
            return Err(format!("use_fraction {} outside (0, 1]", self.use_fraction));
        }
        if self.declared_pages == 0 {
            return Err("malicious jobs must declare at least one page".into());
        }
        if self.duration_s.is_some_and(|d| !(d >= 0.0)) {
            return Err("malicious duration must be non-negative".into());
        }
        Ok(())
    }
}

/// Appends malicious SGX jobs submitted at time 0.
pub fn inject_malicious(
    mut jobs: Vec<JobSpec>,
    spec: &MaliciousSpec,
    sgx_nodes: usize,
    usable_pages: u64,
) -> Vec<JobSpec> {
    let n = spec.count.unwrap_or(sgx_nodes);
    let duration_ms = spec.duration_s.map(seconds_to_ms).unwrap_or_else(|| {
        jobs.iter()
            .map(|j| j.submit_ms + j.duration_ms)
            .max()
            .unwrap_or(0)
    });
    let actual_pages = (spec.use_fraction * usable_pages as f64).floor() as u64;
    jobs.extend((0..n).map(|i| JobSpec {
        job_id: PodId::new(format!("malicious-{i}")),
        submit_ms: 0,
        duration_ms,
        kind: JobKind::MaliciousSgx,
        requested_mem: spec.declared_pages * PAGE_SIZE,
        actual_mem: actual_pages * PAGE_SIZE,
        declared_epc_pages: spec.declared_pages,
        actual_epc_pages: actual_pages,
    }));
    jobs
}
