//! Model of the modified SGX kernel driver.
//!
//! Each SGX node exposes total and free page counters and a per-pod owned
//! page count. Limits live in one flat namespace keyed by pod id and can be
//! set exactly once. All memory an enclave will use is committed by a single
//! `enclave_init` at job start; the driver never pages EPC out, so an
//! allocation larger than the free pool is refused.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::cluster::{Cluster, EpcModel, ModelFault, MIB};
use crate::ids::{NodeId, PodId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitOutcome {
    Granted,
    DeniedLimit,
    DeniedCapacity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("EPC limit for pod {pod} is already set to {current} pages")]
pub struct LimitAlreadySet {
    pub pod: PodId,
    pub current: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEpc {
    pub total_pages: u64,
    pub free_pages: u64,
    owned: BTreeMap<PodId, u64>,
}

impl NodeEpc {
    fn new(total_pages: u64) -> Self {
        Self {
            total_pages,
            free_pages: total_pages,
            owned: BTreeMap::new(),
        }
    }

    pub fn owned_sum(&self) -> u64 {
        self.owned.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DriverState {
    nodes: BTreeMap<NodeId, NodeEpc>,
    limits: HashMap<PodId, u64>,
    pod_node: HashMap<PodId, NodeId>,
}

impl DriverState {
    /// One driver instance per SGX node of `cluster`.
    pub fn new(cluster: &Cluster) -> Self {
        Self::from_nodes(cluster.specs().filter_map(|s| {
            s.epc
                .as_ref()
                .map(|e| (s.node_id.clone(), e.usable_pages()))
        }))
    }

    pub fn from_nodes(nodes: impl IntoIterator<Item = (NodeId, u64)>) -> Self {
        Self {
            nodes: nodes
                .into_iter()
                .map(|(id, pages)| (id, NodeEpc::new(pages)))
                .collect(),
            ..Self::default()
        }
    }

    pub fn node(&self, node: &NodeId) -> Option<&NodeEpc> {
        self.nodes.get(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &NodeEpc)> {
        self.nodes.iter()
    }

    pub fn limit(&self, pod: &PodId) -> Option<u64> {
        self.limits.get(pod).copied()
    }

    /// Sets the pod's EPC page limit. A second call for the same pod fails
    /// and leaves the first limit in place.
    pub fn register_limit(&mut self, pod: &PodId, pages: u64) -> Result<(), LimitAlreadySet> {
        if let Some(&current) = self.limits.get(pod) {
            return Err(LimitAlreadySet {
                pod: pod.clone(),
                current,
            });
        }
        self.limits.insert(pod.clone(), pages);
        Ok(())
    }

    pub fn enclave_init(
        &mut self,
        node: &NodeId,
        pod: &PodId,
        pages: u64,
        enforce: bool,
    ) -> Result<InitOutcome, ModelFault> {
        if let Some(other) = self.pod_node.get(pod) {
            if other != node {
                return Err(ModelFault::DuplicateReservation {
                    node: node.clone(),
                    pod: pod.clone(),
                });
            }
        }
        let epc = self
            .nodes
            .get_mut(node)
            .ok_or_else(|| ModelFault::UnknownNode(node.clone()))?;
        let owned = epc.owned.get(pod).copied().unwrap_or(0);
        if enforce {
            let limit = *self
                .limits
                .get(pod)
                .ok_or_else(|| ModelFault::UnregisteredPod(pod.clone()))?;
            if owned + pages > limit {
                return Ok(InitOutcome::DeniedLimit);
            }
        }
        if pages > epc.free_pages {
            return Ok(InitOutcome::DeniedCapacity);
        }
        epc.free_pages -= pages;
        *epc.owned.entry(pod.clone()).or_default() += pages;
        self.pod_node.insert(pod.clone(), node.clone());
        Ok(InitOutcome::Granted)
    }

    pub fn enclave_release(
        &mut self,
        node: &NodeId,
        pod: &PodId,
        pages: u64,
    ) -> Result<(), ModelFault> {
        let epc = self
            .nodes
            .get_mut(node)
            .ok_or_else(|| ModelFault::UnknownNode(node.clone()))?;
        let owned = epc
            .owned
            .get_mut(pod)
            .ok_or_else(|| ModelFault::UnknownPod(pod.clone()))?;
        if pages > *owned {
            return Err(ModelFault::ReleaseUnderflow {
                pod: pod.clone(),
                owned: *owned,
                pages,
            });
        }
        *owned -= pages;
        epc.free_pages += pages;
        if *owned == 0 {
            epc.owned.remove(pod);
            self.pod_node.remove(pod);
        }
        Ok(())
    }

    /// Releases everything the pod owns; a pod owning nothing is a no-op.
    pub fn release_all(&mut self, pod: &PodId) -> Result<u64, ModelFault> {
        let Some(node) = self.pod_node.get(pod).cloned() else {
            return Ok(0);
        };
        let pages = self.pages_of(pod);
        self.enclave_release(&node, pod, pages)?;
        Ok(pages)
    }

    /// Pages currently owned by the pod, 0 if unknown.
    pub fn pages_of(&self, pod: &PodId) -> u64 {
        self.pod_node
            .get(pod)
            .and_then(|n| self.nodes.get(n))
            .and_then(|e| e.owned.get(pod))
            .copied()
            .unwrap_or(0)
    }

    /// Checks `free = total - sum(owned)` on every node and, when `enforce`
    /// is set, that no pod owns more than its limit.
    pub fn check_invariants(&self, enforce: bool) -> Result<(), String> {
        for (id, epc) in &self.nodes {
            let owned = epc.owned_sum();
            if epc.free_pages + owned != epc.total_pages {
                return Err(format!(
                    "node {id}: free {} + owned {owned} != total {}",
                    epc.free_pages, epc.total_pages
                ));
            }
            if enforce {
                for (pod, &pages) in &epc.owned {
                    let limit = self.limits.get(pod).copied().unwrap_or(0);
                    if pages > limit {
                        return Err(format!(
                            "pod {pod} owns {pages} pages over its limit {limit}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Enclave launch latency in milliseconds for an SGX job allocating
/// `alloc_bytes`: platform service startup plus a per-MiB allocation cost
/// whose rate and fixed offset step up once the allocation exceeds the
/// usable EPC.
pub fn startup_delay(alloc_bytes: u64, model: &EpcModel) -> f64 {
    let mib = alloc_bytes as f64 / MIB as f64;
    if mib <= model.usable_mib() {
        model.aesm_startup_ms + model.rate_below_ms_per_mib * mib
    } else {
        model.aesm_startup_ms + model.fixed_above_ms + model.rate_above_ms_per_mib * mib
    }
}
