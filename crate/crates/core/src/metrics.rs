//! In-process time-series store for per-pod usage samples.
//!
//! [`per_node_usage`] implements the scheduler's sliding-window query:
//!
//! ```text
//! SELECT SUM(epc) AS epc FROM
//!   (SELECT MAX(value) AS epc FROM "sgx/epc"
//!     WHERE value <> 0 AND time >= now() - 25s
//!     GROUP BY pod_name, nodename)
//! GROUP BY nodename
//! ```
//!
//! Both window ends are closed.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Cluster;
use crate::csvio;
use crate::driver::DriverState;
use crate::ids::{NodeId, PodId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    EpcPages,
    StdBytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSample {
    pub time_ms: u64,
    pub node: NodeId,
    pub pod: PodId,
    pub metric: Metric,
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowQuery {
    pub metric: Metric,
    pub window_ms: u64,
    pub now_ms: u64,
}

impl WindowQuery {
    pub const DEFAULT_WINDOW_MS: u64 = 25_000;

    pub fn new(metric: Metric, now_ms: u64) -> Self {
        Self {
            metric,
            window_ms: Self::DEFAULT_WINDOW_MS,
            now_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error(
        "out-of-order sample for {node}/{pod}/{metric:?}: t={time_ms} ms after t={last_ms} ms"
    )]
    OutOfOrder {
        node: NodeId,
        pod: PodId,
        metric: Metric,
        time_ms: u64,
        last_ms: u64,
    },
}

type StreamKey = (Metric, NodeId, PodId);

#[derive(Debug, Clone, Default)]
struct Stream {
    times: Vec<u64>,
    values: Vec<u64>,
}

/// Append-only sample store, one time-ordered stream per
/// (metric, node, pod).
#[derive(Debug, Clone, Default)]
pub struct SeriesStore {
    streams: BTreeMap<StreamKey, Stream>,
    len: usize,
}

impl SeriesStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn append(&mut self, sample: MetricSample) -> Result<(), MetricsError> {
        let key = (sample.metric, sample.node, sample.pod);
        if let Some(&last) = self.streams.get(&key).and_then(|s| s.times.last()) {
            if sample.time_ms < last {
                let (metric, node, pod) = key;
                return Err(MetricsError::OutOfOrder {
                    node,
                    pod,
                    metric,
                    time_ms: sample.time_ms,
                    last_ms: last,
                });
            }
        }
        let stream = self.streams.entry(key).or_default();
        stream.times.push(sample.time_ms);
        stream.values.push(sample.value);
        self.len += 1;
        Ok(())
    }

    /// All samples ordered by (time, node, pod, metric).
    pub fn samples(&self) -> Vec<MetricSample> {
        let mut out: Vec<MetricSample> = self
            .streams
            .iter()
            .flat_map(|((metric, node, pod), s)| {
                s.times
                    .iter()
                    .zip(&s.values)
                    .map(move |(&t, &v)| MetricSample {
                        time_ms: t,
                        node: node.clone(),
                        pod: pod.clone(),
                        metric: *metric,
                        value: v,
                    })
            })
            .collect();
        out.sort_by(|a, b| {
            (a.time_ms, &a.node, &a.pod, a.metric).cmp(&(b.time_ms, &b.node, &b.pod, b.metric))
        });
        out
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        csvio::write_rows(&SAMPLE_HEADER, &self.samples(), sink)
    }
}

const SAMPLE_HEADER: [&str; 5] = ["time_ms", "node", "pod", "metric", "value"];

pub fn read_samples_csv<R: Read>(source: R) -> Result<Vec<MetricSample>, String> {
    csvio::read_rows(&SAMPLE_HEADER, source)
}

/// Per-node sum of per-pod maxima over non-zero samples inside
/// `[now - window, now]`. Nodes without qualifying samples are absent.
pub fn per_node_usage(store: &SeriesStore, q: &WindowQuery) -> HashMap<NodeId, u64> {
    let lo = q.now_ms.saturating_sub(q.window_ms);
    let hi = q.now_ms;
    let mut out: HashMap<NodeId, u64> = HashMap::new();
    let first = (q.metric, NodeId::new(""), PodId::new(""));
    for ((metric, node, _), s) in store.streams.range(first..) {
        if *metric != q.metric {
            break;
        }
        match (s.times.first(), s.times.last()) {
            (Some(&t0), Some(&t1)) if t0 <= hi && t1 >= lo => {}
            _ => continue,
        }
        let start = s.times.partition_point(|&t| t < lo);
        let end = s.times.partition_point(|&t| t <= hi);
        let peak = s.values[start..end]
            .iter()
            .copied()
            .filter(|&v| v != 0)
            .max();
        if let Some(peak) = peak {
            *out.entry(node.clone()).or_default() += peak;
        }
    }
    out
}

/// Records one EPC sample per running SGX pod (pages owned according to the
/// driver) and one standard-memory sample per running pod.
pub fn probe_tick(
    cluster: &Cluster,
    driver: &DriverState,
    store: &mut SeriesStore,
    now_ms: u64,
) -> Result<(), MetricsError> {
    for node in cluster.nodes() {
        for (pod, footprint) in node.running() {
            if footprint.sgx {
                store.append(MetricSample {
                    time_ms: now_ms,
                    node: node.id().clone(),
                    pod: pod.clone(),
                    metric: Metric::EpcPages,
                    value: driver.pages_of(pod),
                })?;
            }
            store.append(MetricSample {
                time_ms: now_ms,
                node: node.id().clone(),
                pod: pod.clone(),
                metric: Metric::StdBytes,
                value: footprint.used_std_bytes,
            })?;
        }
    }
    Ok(())
}
