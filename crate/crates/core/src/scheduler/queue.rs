use std::collections::BTreeMap;

use crate::cluster::PAGE_SIZE;
use crate::ids::PodId;
use crate::trace::JobSpec;

/// Jobs waiting for placement in first-come-first-served order: by submit
/// time, ties broken by job id.
#[derive(Debug, Clone, Default)]
pub struct PendingQueue {
    jobs: BTreeMap<(u64, PodId), JobSpec>,
}

impl PendingQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, job: JobSpec) {
        self.jobs.insert((job.submit_ms, job.job_id.clone()), job);
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &JobSpec> {
        self.jobs.values()
    }

    pub fn drain(&mut self) -> impl Iterator<Item = JobSpec> {
        std::mem::take(&mut self.jobs).into_values()
    }

    /// Keeps the jobs for which `keep` returns true, visiting them in queue
    /// order.
    pub(crate) fn retain(&mut self, mut keep: impl FnMut(&JobSpec) -> bool) {
        self.jobs.retain(|_, job| keep(job));
    }

    /// Declared EPC of queued SGX jobs, in bytes.
    pub fn pending_epc_bytes(&self) -> u64 {
        self.jobs
            .values()
            .filter(|j| j.kind.is_sgx())
            .map(|j| j.declared_epc_pages * PAGE_SIZE)
            .sum()
    }
}

impl FromIterator<JobSpec> for PendingQueue {
    fn from_iter<I: IntoIterator<Item = JobSpec>>(iter: I) -> Self {
        let mut q = Self::new();
        iter.into_iter().for_each(|j| q.push(j));
        q
    }
}
