//! Deterministic discrete-event replay of a workload on a cluster.
//!
//! Job lifecycle: submit, wait in the pending queue, get placed by a
//! scheduler tick, register the pod's EPC limit and initialize its enclave
//! (SGX jobs), wait out the startup delay, run for the trace duration and
//! finish. An enclave initialization the driver refuses kills the job on
//! the spot; killed jobs are not retried.
//!
//! Events at the same instant are processed in the order finish, startup
//! done, probe, scheduler tick, submit, then by insertion order. Freed
//! capacity and fresh samples are therefore visible to a scheduler tick
//! taking place at the same time.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Cluster, ModelFault, NodeSpec};
use crate::csvio;
use crate::driver::{startup_delay, DriverState, InitOutcome, LimitAlreadySet};
use crate::ids::{NodeId, PodId};
use crate::metrics::{probe_tick, MetricsError, SeriesStore};
use crate::scheduler::{place_pending, usage_snapshot, PendingQueue, Policy};
use crate::trace::{JobKind, JobSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub policy: Policy,
    pub enforce_limits: bool,
    pub scheduler_period_ms: u64,
    pub probe_period_ms: u64,
    pub window_ms: u64,
    /// Charge the enclave startup delay before SGX jobs begin running.
    pub startup_delays: bool,
    /// Verify cluster and driver invariants after every event.
    pub check_invariants: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Binpack,
            enforce_limits: true,
            scheduler_period_ms: 5_000,
            probe_period_ms: 10_000,
            window_ms: 25_000,
            startup_delays: true,
            check_invariants: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.scheduler_period_ms == 0 || self.probe_period_ms == 0 || self.window_ms == 0 {
            return Err("scheduler period, probe period and window must be positive".into());
        }
        if self.probe_period_ms >= self.window_ms {
            return Err(format!(
                "probe period {} ms must be shorter than the query window {} ms",
                self.probe_period_ms, self.window_ms
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("duplicate job id {0}")]
    DuplicateJob(PodId),
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Fault(#[from] ModelFault),
    #[error(transparent)]
    Limit(#[from] LimitAlreadySet),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invariant violated at t={time_ms} ms: {message}")]
    Invariant { time_ms: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobStatus {
    Completed,
    Killed,
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobOutcome {
    pub job_id: PodId,
    pub kind: JobKind,
    pub submitted_ms: u64,
    /// Placement instant; absent for killed and unfinished jobs.
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
    pub status: JobStatus,
    pub node_id: Option<NodeId>,
    pub declared_pages: u64,
    pub actual_pages: u64,
    /// Enclave startup delay charged between placement and run start.
    pub startup_ms: u64,
    pub duration_ms: u64,
    pub requested_mem: u64,
}

impl JobOutcome {
    pub fn waiting_ms(&self) -> Option<u64> {
        self.started_ms.map(|s| s - self.submitted_ms)
    }

    pub fn turnaround_ms(&self) -> Option<u64> {
        match (self.status, self.finished_ms) {
            (JobStatus::Completed, Some(f)) => Some(f - self.submitted_ms),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPoint {
    pub time_ms: u64,
    pub pending_epc_bytes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// In (submit time, job id) order.
    pub outcomes: Vec<JobOutcome>,
    pub samples: SeriesStore,
    /// Declared EPC of queued SGX jobs after every scheduler tick.
    pub pending_epc: Vec<PendingPoint>,
    pub denied_limit: usize,
    pub denied_capacity: usize,
}

impl RunOutput {
    /// Finish time of the last completed job.
    pub fn makespan_ms(&self) -> u64 {
        self.outcomes
            .iter()
            .filter(|o| o.status == JobStatus::Completed)
            .filter_map(|o| o.finished_ms)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Finish(usize),
    StartupDone(usize),
    ProbeTick,
    SchedulerTick,
    Submit(usize),
}

impl EventKind {
    fn rank(self) -> u8 {
        match self {
            EventKind::Finish(_) => 0,
            EventKind::StartupDone(_) => 1,
            EventKind::ProbeTick => 2,
            EventKind::SchedulerTick => 3,
            EventKind::Submit(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct SimEvent {
    time_ms: u64,
    rank: u8,
    seq: u64,
    kind: EventKind,
}

#[derive(Debug, Clone, Default)]
struct JobState {
    node: Option<NodeId>,
    placed_ms: Option<u64>,
    finished_ms: Option<u64>,
    startup_ms: u64,
    status: Option<JobStatus>,
}

struct Simulation<'a> {
    cfg: &'a EngineConfig,
    jobs: Vec<JobSpec>,
    index: HashMap<PodId, usize>,
    state: Vec<JobState>,
    cluster: Cluster,
    driver: DriverState,
    store: SeriesStore,
    queue: PendingQueue,
    events: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    submitted: usize,
    terminal: usize,
    pending_epc: Vec<PendingPoint>,
    denied_limit: usize,
    denied_capacity: usize,
}

/// Replays `jobs` on a cluster built from `nodes` until every job is
/// terminal.
///
/// Jobs still queued once nothing is running, nothing is left to submit and
/// no measurement remains in the query window can never be placed; they are
/// reported as [`JobStatus::Unfinished`].
pub fn run(
    jobs: &[JobSpec],
    nodes: &[NodeSpec],
    cfg: &EngineConfig,
) -> Result<RunOutput, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    let mut jobs = jobs.to_vec();
    jobs.sort_by(|a, b| (a.submit_ms, &a.job_id).cmp(&(b.submit_ms, &b.job_id)));
    let mut index = HashMap::with_capacity(jobs.len());
    for (i, job) in jobs.iter().enumerate() {
        job.check_invariants().map_err(EngineError::InvalidJob)?;
        if index.insert(job.job_id.clone(), i).is_some() {
            return Err(EngineError::DuplicateJob(job.job_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    for spec in nodes {
        if !seen.insert(&spec.node_id) {
            return Err(EngineError::Config(format!(
                "duplicate node id {}",
                spec.node_id
            )));
        }
        if let Some(epc) = &spec.epc {
            epc.validate()?;
        }
    }
    let cluster = Cluster::new(nodes.iter().cloned());
    let mut sim = Simulation {
        cfg,
        state: vec![JobState::default(); jobs.len()],
        index,
        driver: DriverState::new(&cluster),
        cluster,
        store: SeriesStore::new(),
        queue: PendingQueue::new(),
        events: BinaryHeap::new(),
        seq: 0,
        submitted: 0,
        terminal: 0,
        pending_epc: Vec::new(),
        denied_limit: 0,
        denied_capacity: 0,
        jobs,
    };
    sim.run()?;
    Ok(sim.finish())
}

impl Simulation<'_> {
    fn push(&mut self, time_ms: u64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(SimEvent {
            time_ms,
            rank: kind.rank(),
            seq: self.seq,
            kind,
        }));
    }

    fn done(&self) -> bool {
        self.terminal == self.jobs.len()
    }

    fn run(&mut self) -> Result<(), EngineError> {
        for i in 0..self.jobs.len() {
            self.push(self.jobs[i].submit_ms, EventKind::Submit(i));
        }
        self.push(0, EventKind::ProbeTick);
        self.push(0, EventKind::SchedulerTick);

        while let Some(Reverse(ev)) = self.events.pop() {
            let now = ev.time_ms;
            match ev.kind {
                EventKind::Submit(i) => {
                    self.queue.push(self.jobs[i].clone());
                    self.submitted += 1;
                }
                EventKind::ProbeTick => {
                    probe_tick(&self.cluster, &self.driver, &mut self.store, now)?;
                    if !self.done() {
                        self.push(now + self.cfg.probe_period_ms, EventKind::ProbeTick);
                    }
                }
                EventKind::SchedulerTick => {
                    self.scheduler_tick(now)?;
                    if !self.done() {
                        self.push(now + self.cfg.scheduler_period_ms, EventKind::SchedulerTick);
                    }
                }
                EventKind::StartupDone(i) => {
                    self.push(now + self.jobs[i].duration_ms, EventKind::Finish(i));
                }
                EventKind::Finish(i) => self.complete(i, now)?,
            }
            if self.cfg.check_invariants {
                self.check_invariants(now)?;
            }
        }
        Ok(())
    }

    fn scheduler_tick(&mut self, now: u64) -> Result<(), EngineError> {
        let mut usage = usage_snapshot(&self.store, now, self.cfg.window_ms);
        let nothing_measured = usage.is_empty();
        let placements = place_pending(
            &mut self.queue,
            &mut self.cluster,
            &mut usage,
            now,
            self.cfg.policy,
        )?;
        let placed_any = !placements.is_empty();
        for p in placements {
            let i = self.index[&p.job_id];
            self.start(i, p.node_id, now)?;
        }
        self.pending_epc.push(PendingPoint {
            time_ms: now,
            pending_epc_bytes: self.queue.pending_epc_bytes(),
        });

        let stuck = !placed_any
            && nothing_measured
            && self.submitted == self.jobs.len()
            && self.cluster.is_idle()
            && !self.queue.is_empty();
        if stuck {
            for job in self.queue.drain() {
                let i = self.index[&job.job_id];
                log::warn!("job {} can never be placed on this cluster", job.job_id);
                self.state[i].status = Some(JobStatus::Unfinished);
                self.terminal += 1;
            }
        }
        Ok(())
    }

    fn start(&mut self, i: usize, node: NodeId, now: u64) -> Result<(), EngineError> {
        let job = &self.jobs[i];
        let pod = job.job_id.clone();
        self.state[i].node = Some(node.clone());
        if !job.kind.is_sgx() {
            self.state[i].placed_ms = Some(now);
            self.push(now, EventKind::StartupDone(i));
            return Ok(());
        }
        self.driver.register_limit(&pod, job.declared_epc_pages)?;
        let outcome =
            self.driver
                .enclave_init(&node, &pod, job.actual_epc_pages, self.cfg.enforce_limits)?;
        match outcome {
            InitOutcome::Granted => {
                let delay = if self.cfg.startup_delays {
                    let epc = self
                        .cluster
                        .node(&node)
                        .and_then(|n| n.spec.epc.as_ref())
                        .ok_or_else(|| ModelFault::NotSgxNode(node.clone()))?;
                    startup_delay(job.actual_mem, epc).ceil() as u64
                } else {
                    0
                };
                self.state[i].placed_ms = Some(now);
                self.state[i].startup_ms = delay;
                self.push(now + delay, EventKind::StartupDone(i));
            }
            InitOutcome::DeniedLimit | InitOutcome::DeniedCapacity => {
                if outcome == InitOutcome::DeniedLimit {
                    self.denied_limit += 1;
                } else {
                    self.denied_capacity += 1;
                }
                log::debug!("t={now} ms: job {pod} killed on {node}: {outcome:?}");
                self.cluster
                    .node_mut(&node)
                    .ok_or_else(|| ModelFault::UnknownNode(node.clone()))?
                    .release(&pod)?;
                self.state[i].status = Some(JobStatus::Killed);
                self.terminal += 1;
            }
        }
        Ok(())
    }

    fn complete(&mut self, i: usize, now: u64) -> Result<(), EngineError> {
        let pod = self.jobs[i].job_id.clone();
        let node = self.state[i]
            .node
            .clone()
            .expect("finished jobs were placed");
        if self.jobs[i].kind.is_sgx() {
            let owned = self.driver.pages_of(&pod);
            if owned > 0 {
                self.driver.enclave_release(&node, &pod, owned)?;
            }
        }
        self.cluster
            .node_mut(&node)
            .ok_or_else(|| ModelFault::UnknownNode(node.clone()))?
            .release(&pod)?;
        self.state[i].finished_ms = Some(now);
        self.state[i].status = Some(JobStatus::Completed);
        self.terminal += 1;
        Ok(())
    }

    fn check_invariants(&self, now: u64) -> Result<(), EngineError> {
        let violation = |message: String| EngineError::Invariant {
            time_ms: now,
            message,
        };
        for node in self.cluster.nodes() {
            if node.reserved_std() > node.spec.std_capacity {
                return Err(violation(format!(
                    "node {} standard memory over-committed",
                    node.id()
                )));
            }
            let declared: u64 = node
                .running()
                .filter(|(_, f)| f.sgx)
                .map(|(_, f)| f.epc_pages)
                .sum();
            if declared != node.reserved_epc_pages() || declared > node.spec.usable_pages() {
                return Err(violation(format!("node {} EPC over-committed", node.id())));
            }
            if let Some(epc) = self.driver.node(node.id()) {
                if epc.total_pages != node.spec.usable_pages() {
                    return Err(violation(format!(
                        "node {} driver total drifted",
                        node.id()
                    )));
                }
                if self.cfg.enforce_limits && epc.owned_sum() > declared {
                    return Err(violation(format!(
                        "node {} owns more pages than declared",
                        node.id()
                    )));
                }
            }
        }
        self.driver
            .check_invariants(self.cfg.enforce_limits)
            .map_err(violation)
    }

    fn finish(self) -> RunOutput {
        let outcomes = self
            .jobs
            .iter()
            .zip(self.state)
            .map(|(job, st)| {
                let status = st.status.unwrap_or(JobStatus::Unfinished);
                let started = match status {
                    JobStatus::Completed => st.placed_ms,
                    _ => None,
                };
                JobOutcome {
                    job_id: job.job_id.clone(),
                    kind: job.kind,
                    submitted_ms: job.submit_ms,
                    started_ms: started,
                    finished_ms: st.finished_ms,
                    status,
                    node_id: st.node,
                    declared_pages: job.declared_epc_pages,
                    actual_pages: job.actual_epc_pages,
                    startup_ms: st.startup_ms,
                    duration_ms: job.duration_ms,
                    requested_mem: job.requested_mem,
                }
            })
            .collect();
        RunOutput {
            outcomes,
            samples: self.store,
            pending_epc: self.pending_epc,
            denied_limit: self.denied_limit,
            denied_capacity: self.denied_capacity,
        }
    }
}

/// One row of `outcomes.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub job_id: PodId,
    pub kind: JobKind,
    pub submit_ms: u64,
    pub start_ms: Option<u64>,
    pub finish_ms: Option<u64>,
    pub status: JobStatus,
    pub node_id: Option<NodeId>,
    pub declared_pages: u64,
    pub actual_pages: u64,
}

impl From<&JobOutcome> for OutcomeRow {
    fn from(o: &JobOutcome) -> Self {
        Self {
            job_id: o.job_id.clone(),
            kind: o.kind,
            submit_ms: o.submitted_ms,
            start_ms: o.started_ms,
            finish_ms: o.finished_ms,
            status: o.status,
            node_id: o.node_id.clone(),
            declared_pages: o.declared_pages,
            actual_pages: o.actual_pages,
        }
    }
}

const OUTCOME_HEADER: [&str; 9] = [
    "job_id",
    "kind",
    "submit_ms",
    "start_ms",
    "finish_ms",
    "status",
    "node_id",
    "declared_pages",
    "actual_pages",
];

pub fn write_outcomes_csv<W: Write>(outcomes: &[JobOutcome], sink: W) -> csv::Result<()> {
    let rows: Vec<OutcomeRow> = outcomes.iter().map(OutcomeRow::from).collect();
    csvio::write_rows(&OUTCOME_HEADER, &rows, sink)
}

pub fn read_outcomes_csv<R: Read>(source: R) -> Result<Vec<OutcomeRow>, String> {
    csvio::read_rows(&OUTCOME_HEADER, source)
}

const PENDING_HEADER: [&str; 2] = ["time_ms", "pending_epc_bytes"];

pub fn write_pending_csv<W: Write>(points: &[PendingPoint], sink: W) -> csv::Result<()> {
    csvio::write_rows(&PENDING_HEADER, points, sink)
}

pub fn read_pending_csv<R: Read>(source: R) -> Result<Vec<PendingPoint>, String> {
    csvio::read_rows(&PENDING_HEADER, source)
}
