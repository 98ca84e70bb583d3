//! SGX-aware container scheduling simulator.
//!
//! Replays a job trace on a cluster where some nodes carry a small pool of
//! protected enclave memory (EPC). The scheduler places pods by binpack or
//! spread, admitting them against declared EPC and a sliding-window view of
//! measured usage. A model of the SGX driver enforces per-pod EPC limits at
//! enclave initialization.

pub mod cluster;
mod csvio;
pub mod driver;
pub mod engine;
pub mod experiment;
pub mod ids;
pub mod metrics;
pub mod report;
pub mod scheduler;
pub mod trace;

pub use cluster::{
    reference_cluster, Cluster, EpcModel, Footprint, ModelFault, NodeSpec, NodeState, GIB, KIB,
    MIB, PAGE_SIZE,
};
pub use driver::{startup_delay, DriverState, InitOutcome};
pub use engine::{run, EngineConfig, EngineError, JobOutcome, JobStatus, PendingPoint, RunOutput};
pub use ids::{NodeId, PodId};
pub use metrics::{per_node_usage, Metric, MetricSample, SeriesStore, WindowQuery};
pub use scheduler::{schedule_tick, PendingQueue, Placement, Policy};
pub use trace::{JobKind, JobSpec, RawJobRecord, ScalingConfig};
