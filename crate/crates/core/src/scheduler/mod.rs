//! SGX-aware placement: a periodic first-come-first-served pass over the
//! pending queue that filters nodes by measured usage and reservations and
//! then applies the binpack or spread policy.

mod policy;
mod queue;

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, Footprint, ModelFault};
use crate::ids::{NodeId, PodId};
use crate::metrics::{per_node_usage, Metric, SeriesStore, WindowQuery};

pub use policy::{binpack_select, feasible, select, spread_select, NodeUsage, Policy, UsageMap};
pub use queue::PendingQueue;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub job_id: PodId,
    pub node_id: NodeId,
    pub decided_at: u64,
}

/// Measured usage of every node over the window ending at `now_ms`.
pub fn usage_snapshot(store: &SeriesStore, now_ms: u64, window_ms: u64) -> UsageMap {
    let mut usage = UsageMap::new();
    let query = |metric| WindowQuery {
        metric,
        window_ms,
        now_ms,
    };
    for (node, pages) in per_node_usage(store, &query(Metric::EpcPages)) {
        usage.entry(node).or_default().epc_pages = pages;
    }
    for (node, bytes) in per_node_usage(store, &query(Metric::StdBytes)) {
        usage.entry(node).or_default().std_bytes = bytes;
    }
    usage
}

/// One scheduling pass: snapshots usage over the window ending at `now_ms`
/// and hands it to [`place_pending`].
pub fn schedule_tick(
    queue: &mut PendingQueue,
    cluster: &mut Cluster,
    store: &SeriesStore,
    now_ms: u64,
    window_ms: u64,
    policy: Policy,
) -> Result<Vec<Placement>, ModelFault> {
    let mut usage = usage_snapshot(store, now_ms, window_ms);
    place_pending(queue, cluster, &mut usage, now_ms, policy)
}

/// Walks the queue in FCFS order against a usage snapshot.
///
/// Every placement reserves its resources on the node and is added to that
/// node's entry in `usage`, so later jobs in the same pass see it. Jobs with
/// no feasible node stay queued and the pass moves on to the next job.
pub fn place_pending(
    queue: &mut PendingQueue,
    cluster: &mut Cluster,
    usage: &mut UsageMap,
    now_ms: u64,
    policy: Policy,
) -> Result<Vec<Placement>, ModelFault> {
    let mut placements = Vec::new();
    let mut fault = None;
    queue.retain(|job| {
        if fault.is_some() {
            return true;
        }
        let Some(node_id) = select(policy, job, cluster.nodes(), usage) else {
            return true;
        };
        let footprint = Footprint {
            std_bytes: job.requested_mem,
            epc_pages: job.declared_epc_pages,
            used_std_bytes: job.actual_mem,
            sgx: job.kind.is_sgx(),
        };
        let node = cluster
            .node_mut(&node_id)
            .expect("selectors only return nodes of the cluster");
        if let Err(e) = node.reserve(job.job_id.clone(), footprint) {
            fault = Some(e);
            return true;
        }
        let seen = usage.entry(node_id.clone()).or_default();
        seen.epc_pages += job.declared_epc_pages;
        seen.std_bytes += job.requested_mem;
        placements.push(Placement {
            job_id: job.job_id.clone(),
            node_id,
            decided_at: now_ms,
        });
        false
    });
    match fault {
        Some(e) => Err(e),
        None => Ok(placements),
    }
}
