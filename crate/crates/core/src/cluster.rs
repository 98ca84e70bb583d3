//! Static cluster description and EPC page arithmetic.
//!
//! SGX nodes expose their usable EPC as a countable resource, one item per
//! 4 KiB page. Admission never over-commits it: [`NodeState::reserve`] treats
//! any reservation past capacity as a [`ModelFault`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, PodId};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;
pub const GIB: u64 = 1024 * MIB;

/// EPC page size.
pub const PAGE_SIZE: u64 = 4 * KIB;

/// Usable share of a 128 MiB EPC once SGX metadata is accounted for.
pub const DEFAULT_EPC_TOTAL: u64 = 128 * MIB;
pub const DEFAULT_EPC_USABLE: u64 = 93 * MIB + MIB / 2;

/// Conditions that indicate a bug in the caller (usually the scheduler)
/// rather than a recoverable situation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelFault {
    #[error("node {0} has no EPC")]
    NotSgxNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("pod {pod} already holds a reservation on node {node}")]
    DuplicateReservation { node: NodeId, pod: PodId },
    #[error("pod {pod} holds no reservation on node {node}")]
    UnknownReservation { node: NodeId, pod: PodId },
    #[error(
        "node {node}: standard memory over-commit ({reserved} + {requested} > {capacity} bytes)"
    )]
    StdOvercommit {
        node: NodeId,
        reserved: u64,
        requested: u64,
        capacity: u64,
    },
    #[error("node {node}: EPC over-commit ({reserved} + {requested} > {usable} pages)")]
    EpcOvercommit {
        node: NodeId,
        reserved: u64,
        requested: u64,
        usable: u64,
    },
    #[error("pod {0} owns no EPC pages")]
    UnknownPod(PodId),
    #[error("pod {pod}: releasing {pages} pages but only {owned} owned")]
    ReleaseUnderflow { pod: PodId, owned: u64, pages: u64 },
    #[error("pod {0} has no registered EPC limit")]
    UnregisteredPod(PodId),
    #[error("invalid EPC model: {0}")]
    InvalidEpcModel(String),
}

/// Protected-memory parameters of one SGX machine, including the enclave
/// startup cost constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpcModel {
    pub total_bytes: u64,
    pub usable_bytes: u64,
    pub page_size: u64,
    /// Per-container platform service startup, in milliseconds.
    pub aesm_startup_ms: f64,
    /// Allocation cost while the enclave fits in usable EPC (ms per MiB).
    pub rate_below_ms_per_mib: f64,
    /// Allocation cost once the enclave exceeds usable EPC (ms per MiB).
    pub rate_above_ms_per_mib: f64,
    /// Fixed penalty added once the enclave exceeds usable EPC (ms).
    pub fixed_above_ms: f64,
}

impl Default for EpcModel {
    fn default() -> Self {
        Self {
            total_bytes: DEFAULT_EPC_TOTAL,
            usable_bytes: DEFAULT_EPC_USABLE,
            page_size: PAGE_SIZE,
            aesm_startup_ms: 100.0,
            rate_below_ms_per_mib: 1.6,
            rate_above_ms_per_mib: 4.5,
            fixed_above_ms: 200.0,
        }
    }
}

impl EpcModel {
    /// Default cost constants with the given usable capacity. The total is
    /// raised to match when the usable size exceeds the default total.
    pub fn with_usable(usable_bytes: u64) -> Result<Self, ModelFault> {
        let model = Self {
            total_bytes: DEFAULT_EPC_TOTAL.max(usable_bytes),
            usable_bytes,
            ..Self::default()
        };
        model.validate()?;
        Ok(model)
    }

    /// Treats `total_bytes` as the raw EPC size and derives the usable part
    /// with the same metadata overhead as a 128 MiB part (93.5/128), rounded
    /// down to whole pages.
    pub fn with_total_scaled(total_bytes: u64) -> Result<Self, ModelFault> {
        let usable =
            (total_bytes as u128 * DEFAULT_EPC_USABLE as u128 / DEFAULT_EPC_TOTAL as u128) as u64;
        let model = Self {
            total_bytes,
            usable_bytes: usable / PAGE_SIZE * PAGE_SIZE,
            ..Self::default()
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelFault> {
        if self.page_size == 0 {
            return Err(ModelFault::InvalidEpcModel(
                "page size must be positive".into(),
            ));
        }
        if self.usable_bytes > self.total_bytes {
            return Err(ModelFault::InvalidEpcModel(format!(
                "usable {} exceeds total {}",
                self.usable_bytes, self.total_bytes
            )));
        }
        if !self.usable_bytes.is_multiple_of(self.page_size) {
            return Err(ModelFault::InvalidEpcModel(format!(
                "usable {} is not a multiple of the page size {}",
                self.usable_bytes, self.page_size
            )));
        }
        let costs = [
            self.aesm_startup_ms,
            self.rate_below_ms_per_mib,
            self.rate_above_ms_per_mib,
            self.fixed_above_ms,
        ];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(ModelFault::InvalidEpcModel(
                "startup costs must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn usable_pages(&self) -> u64 {
        self.usable_bytes / self.page_size
    }

    pub fn usable_mib(&self) -> f64 {
        self.usable_bytes as f64 / MIB as f64
    }
}

/// Number of pages needed to hold `bytes`. A partial page occupies a whole
/// page slot.
pub fn pages_for(bytes: u64, model: &EpcModel) -> u64 {
    bytes.div_ceil(model.page_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    pub std_capacity: u64,
    pub epc: Option<EpcModel>,
}

impl NodeSpec {
    pub fn standard(node_id: impl Into<NodeId>, std_capacity: u64) -> Self {
        Self {
            node_id: node_id.into(),
            std_capacity,
            epc: None,
        }
    }

    pub fn sgx(node_id: impl Into<NodeId>, std_capacity: u64, epc: EpcModel) -> Self {
        Self {
            node_id: node_id.into(),
            std_capacity,
            epc: Some(epc),
        }
    }

    pub fn is_sgx(&self) -> bool {
        self.epc.is_some()
    }

    pub fn usable_pages(&self) -> u64 {
        self.epc.as_ref().map_or(0, EpcModel::usable_pages)
    }
}

/// What a placed pod holds on its node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Footprint {
    /// Advertised standard memory, reserved at placement.
    pub std_bytes: u64,
    /// Declared EPC pages, reserved at placement.
    pub epc_pages: u64,
    /// Standard memory the pod actually allocates; fed to the metrics probe.
    pub used_std_bytes: u64,
    pub sgx: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub spec: NodeSpec,
    running: BTreeMap<PodId, Footprint>,
    reserved_std: u64,
    reserved_epc_pages: u64,
}

impl NodeState {
    pub fn new(spec: NodeSpec) -> Self {
        Self {
            spec,
            running: BTreeMap::new(),
            reserved_std: 0,
            reserved_epc_pages: 0,
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.spec.node_id
    }

    pub fn is_sgx(&self) -> bool {
        self.spec.is_sgx()
    }

    pub fn reserved_std(&self) -> u64 {
        self.reserved_std
    }

    pub fn reserved_epc_pages(&self) -> u64 {
        self.reserved_epc_pages
    }

    pub fn running(&self) -> impl Iterator<Item = (&PodId, &Footprint)> {
        self.running.iter()
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_empty()
    }

    pub fn reserve(&mut self, pod: PodId, footprint: Footprint) -> Result<(), ModelFault> {
        let node = self.spec.node_id.clone();
        if self.running.contains_key(&pod) {
            return Err(ModelFault::DuplicateReservation { node, pod });
        }
        if footprint.epc_pages > 0 && !self.is_sgx() {
            return Err(ModelFault::NotSgxNode(node));
        }
        if self.reserved_std + footprint.std_bytes > self.spec.std_capacity {
            return Err(ModelFault::StdOvercommit {
                node,
                reserved: self.reserved_std,
                requested: footprint.std_bytes,
                capacity: self.spec.std_capacity,
            });
        }
        let usable = self.spec.usable_pages();
        if self.reserved_epc_pages + footprint.epc_pages > usable {
            return Err(ModelFault::EpcOvercommit {
                node,
                reserved: self.reserved_epc_pages,
                requested: footprint.epc_pages,
                usable,
            });
        }
        self.reserved_std += footprint.std_bytes;
        self.reserved_epc_pages += footprint.epc_pages;
        self.running.insert(pod, footprint);
        Ok(())
    }

    /// Exact inverse of [`NodeState::reserve`] for the same pod.
    pub fn release(&mut self, pod: &PodId) -> Result<Footprint, ModelFault> {
        let footprint = self
            .running
            .remove(pod)
            .ok_or_else(|| ModelFault::UnknownReservation {
                node: self.spec.node_id.clone(),
                pod: pod.clone(),
            })?;
        self.reserved_std -= footprint.std_bytes;
        self.reserved_epc_pages -= footprint.epc_pages;
        Ok(footprint)
    }
}

/// All nodes of one simulated cluster, kept sorted by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    nodes: Vec<NodeState>,
}

impl Cluster {
    pub fn new(specs: impl IntoIterator<Item = NodeSpec>) -> Self {
        let mut nodes: Vec<NodeState> = specs.into_iter().map(NodeState::new).collect();
        nodes.sort_by(|a, b| a.id().cmp(b.id()));
        Self { nodes }
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeState> {
        self.index(id).map(|i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut NodeState> {
        self.index(id).map(move |i| &mut self.nodes[i])
    }

    pub fn specs(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().map(|n| &n.spec)
    }

    pub fn sgx_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_sgx()).count()
    }

    pub fn is_idle(&self) -> bool {
        self.nodes.iter().all(NodeState::is_idle)
    }

    fn index(&self, id: &NodeId) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.id().cmp(id)).ok()
    }
}

/// The evaluation cluster: two 64 GiB standard workers and two 8 GiB SGX
/// machines with a 128 MiB EPC each.
pub fn reference_cluster() -> Vec<NodeSpec> {
    vec![
        NodeSpec::standard("node-1", 64 * GIB),
        NodeSpec::standard("node-2", 64 * GIB),
        NodeSpec::sgx("sgx-1", 8 * GIB, EpcModel::default()),
        NodeSpec::sgx("sgx-2", 8 * GIB, EpcModel::default()),
    ]
}

/// One row of a cluster description file. Sizes are in bytes; a node is
/// SGX-enabled when `epc_usable` or `epc_total` is present and non-zero.
/// With only `epc_total`, the usable part follows the default ratio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub node_id: NodeId,
    pub std_capacity: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epc_total: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epc_usable: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ClusterFileError {
    #[error("reading cluster file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing cluster file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("node {node}: {reason}")]
    Invalid { node: NodeId, reason: String },
    #[error("duplicate node id {0}")]
    Duplicate(NodeId),
    #[error("cluster description has no nodes")]
    Empty,
}

impl NodeEntry {
    pub fn into_spec(self) -> Result<NodeSpec, ClusterFileError> {
        let invalid = |reason: String| ClusterFileError::Invalid {
            node: self.node_id.clone(),
            reason,
        };
        if self.std_capacity == 0 {
            return Err(invalid("std_capacity must be positive".into()));
        }
        let epc = match (self.epc_usable, self.epc_total) {
            (None | Some(0), None | Some(0)) => None,
            (None | Some(0), Some(total)) => {
                Some(EpcModel::with_total_scaled(total).map_err(|e| invalid(e.to_string()))?)
            }
            (Some(usable), _) => {
                let model = EpcModel {
                    total_bytes: self.epc_total.unwrap_or(DEFAULT_EPC_TOTAL.max(usable)),
                    usable_bytes: usable,
                    ..EpcModel::default()
                };
                model.validate().map_err(|e| invalid(e.to_string()))?;
                Some(model)
            }
        };
        Ok(NodeSpec {
            node_id: self.node_id,
            std_capacity: self.std_capacity,
            epc,
        })
    }

    pub fn from_spec(spec: &NodeSpec) -> Self {
        Self {
            node_id: spec.node_id.clone(),
            std_capacity: spec.std_capacity,
            epc_total: spec.epc.as_ref().map(|e| e.total_bytes),
            epc_usable: spec.epc.as_ref().map(|e| e.usable_bytes),
        }
    }
}

pub fn parse_cluster_entries(entries: Vec<NodeEntry>) -> Result<Vec<NodeSpec>, ClusterFileError> {
    if entries.is_empty() {
        return Err(ClusterFileError::Empty);
    }
    let mut seen = std::collections::BTreeSet::new();
    entries
        .into_iter()
        .map(|e| {
            if !seen.insert(e.node_id.clone()) {
                return Err(ClusterFileError::Duplicate(e.node_id));
            }
            e.into_spec()
        })
        .collect()
}

/// Reads a JSON array of [`NodeEntry`].
pub fn load_cluster_file(path: &Path) -> Result<Vec<NodeSpec>, ClusterFileError> {
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<NodeEntry> = serde_json::from_str(&text)?;
    parse_cluster_entries(entries)
}
