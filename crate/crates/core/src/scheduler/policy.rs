use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::NodeState;
use crate::ids::NodeId;
use crate::trace::JobSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Binpack,
    Spread,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Binpack => "binpack",
            Policy::Spread => "spread",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binpack" => Ok(Policy::Binpack),
            "spread" => Ok(Policy::Spread),
            other => Err(format!(
                "unknown policy {other:?} (expected binpack or spread)"
            )),
        }
    }
}

/// Measured usage of one node from the sliding-window query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeUsage {
    pub epc_pages: u64,
    pub std_bytes: u64,
}

/// Absent nodes count as zero usage.
pub type UsageMap = HashMap<NodeId, NodeUsage>;

fn usage_of(usage: &UsageMap, node: &NodeState) -> NodeUsage {
    usage.get(node.id()).copied().unwrap_or_default()
}

/// Whether `job` fits on `node` given measured usage and reservations. For
/// each resource the larger of measured and reserved is what is taken.
pub fn feasible(job: &JobSpec, node: &NodeState, usage: &NodeUsage) -> bool {
    if job.kind.is_sgx() {
        if !node.is_sgx() {
            return false;
        }
        let taken = usage.epc_pages.max(node.reserved_epc_pages());
        if taken + job.declared_epc_pages > node.spec.usable_pages() {
            return false;
        }
    }
    let taken = usage.std_bytes.max(node.reserved_std());
    taken + job.requested_mem <= node.spec.std_capacity
}

/// Candidate tiers in preference order. SGX jobs only go to SGX nodes;
/// standard jobs fall back to SGX nodes when no plain node fits.
fn tiers<'a>(job: &JobSpec, nodes: &'a [NodeState]) -> Vec<Vec<&'a NodeState>> {
    let mut sorted: Vec<&NodeState> = nodes.iter().collect();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    let (sgx, plain): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|n| n.is_sgx());
    if job.kind.is_sgx() {
        vec![sgx]
    } else {
        vec![plain, sgx]
    }
}

/// Binpack: the first feasible node in a fixed order (plain nodes by id,
/// then SGX nodes by id for standard jobs; SGX nodes by id for SGX jobs).
pub fn binpack_select(job: &JobSpec, nodes: &[NodeState], usage: &UsageMap) -> Option<NodeId> {
    tiers(job, nodes)
        .into_iter()
        .flatten()
        .find(|n| feasible(job, n, &usage_of(usage, n)))
        .map(|n| n.id().clone())
}

/// Reserved fraction of the resource that matters for `job`.
fn load(job: &JobSpec, node: &NodeState, extra: bool) -> f64 {
    if job.kind.is_sgx() {
        let pages = node.reserved_epc_pages() + if extra { job.declared_epc_pages } else { 0 };
        pages as f64 / node.spec.usable_pages().max(1) as f64
    } else {
        let bytes = node.reserved_std() + if extra { job.requested_mem } else { 0 };
        bytes as f64 / node.spec.std_capacity as f64
    }
}

/// Population standard deviation. Values are sorted first so that
/// permutations of the same loads give bit-identical results.
fn population_stddev(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Standard deviation of the tier's loads if `job` were placed on
/// `tier[target]`.
fn post_placement_stddev(job: &JobSpec, tier: &[&NodeState], target: usize) -> f64 {
    let mut loads: Vec<f64> = tier
        .iter()
        .enumerate()
        .map(|(i, n)| load(job, n, i == target))
        .collect();
    population_stddev(&mut loads)
}

/// Spread: within the first tier that has a feasible node, the feasible node
/// whose selection minimizes the standard deviation of reserved load across
/// the tier. Ties go to the smallest node id.
pub fn spread_select(job: &JobSpec, nodes: &[NodeState], usage: &UsageMap) -> Option<NodeId> {
    for tier in tiers(job, nodes) {
        let mut best: Option<(f64, usize)> = None;
        for (i, node) in tier.iter().enumerate() {
            if !feasible(job, node, &usage_of(usage, node)) {
                continue;
            }
            let score = post_placement_stddev(job, &tier, i);
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, i));
            }
        }
        if let Some((_, i)) = best {
            return Some(tier[i].id().clone());
        }
    }
    None
}

pub fn select(
    policy: Policy,
    job: &JobSpec,
    nodes: &[NodeState],
    usage: &UsageMap,
) -> Option<NodeId> {
    match policy {
        Policy::Binpack => binpack_select(job, nodes, usage),
        Policy::Spread => spread_select(job, nodes, usage),
    }
}
