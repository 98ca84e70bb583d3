//! Oracles and property checks shared by the property tests and the
//! acceptance harness. The oracles are written from the model definitions,
//! not from the library code they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use epcsched::engine::{write_outcomes_csv, write_pending_csv, OutcomeRow};
use epcsched::scheduler::{place_pending, NodeUsage, UsageMap};
use epcsched::trace::{materialize, slice_and_sample, write_jobs_csv};
use epcsched::{
    run, startup_delay, Cluster, DriverState, EngineConfig, EpcModel, Footprint, InitOutcome,
    JobKind, JobSpec, JobStatus, Metric, MetricSample, NodeId, NodeSpec, PendingQueue, PodId,
    Policy, RawJobRecord, ScalingConfig, SeriesStore, WindowQuery, MIB,
};

pub const PAGE: u64 = 4096;

// ---------------------------------------------------------------- oracles

/// Enclave startup latency for the default EPC: 100 ms service startup,
/// then 1.6 ms/MiB up to 93.5 MiB, 200 ms + 4.5 ms/MiB beyond.
pub fn startup_oracle_ms(bytes: u64) -> f64 {
    let mib = bytes as f64 / 1_048_576.0;
    if mib <= 93.5 {
        100.0 + 1.6 * mib
    } else {
        100.0 + 200.0 + 4.5 * mib
    }
}

/// Filter -> group by (node, pod) -> max -> sum by node, done naively.
pub fn usage_oracle(
    samples: &[MetricSample],
    metric: Metric,
    now: u64,
    window: u64,
) -> HashMap<NodeId, u64> {
    let lo = now as i128 - window as i128;
    let mut per_pod: BTreeMap<(NodeId, PodId), u64> = BTreeMap::new();
    for s in samples {
        let t = s.time_ms as i128;
        if s.metric == metric && s.value != 0 && t >= lo && s.time_ms <= now {
            let e = per_pod.entry((s.node.clone(), s.pod.clone())).or_insert(0);
            if s.value > *e {
                *e = s.value;
            }
        }
    }
    let mut out = HashMap::new();
    for ((node, _), v) in per_pod {
        *out.entry(node).or_insert(0) += v;
    }
    out
}

/// Population standard deviation, two-pass, in input order.
pub fn stddev_oracle(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Admission rule: for each relevant resource, the larger of measured and
/// reserved usage plus the request must fit the capacity.
pub fn fits_oracle(
    job: &JobSpec,
    spec: &NodeSpec,
    reserved_std: u64,
    reserved_pages: u64,
    usage: NodeUsage,
) -> bool {
    let std_ok = usage.std_bytes.max(reserved_std) + job.requested_mem <= spec.std_capacity;
    if job.kind == JobKind::Standard {
        return std_ok;
    }
    match &spec.epc {
        None => false,
        Some(epc) => {
            let usable = epc.usable_bytes / PAGE;
            std_ok && usage.epc_pages.max(reserved_pages) + job.declared_epc_pages <= usable
        }
    }
}

// ------------------------------------------------------------- strategies

fn sample_strategy() -> impl Strategy<Value = (u8, u8, bool, u64, u64)> {
    (
        0u8..4,
        0u8..6,
        any::<bool>(),
        0u64..120_000,
        prop_oneof![1 => Just(0u64), 4 => 0u64..1000],
    )
}

/// Random samples, appended in time order.
pub fn samples_strategy(max: usize) -> impl Strategy<Value = Vec<MetricSample>> {
    prop::collection::vec(sample_strategy(), 0..max).prop_map(|raw| {
        let mut v: Vec<MetricSample> = raw
            .into_iter()
            .map(|(n, p, m, t, value)| MetricSample {
                time_ms: t,
                node: NodeId::new(format!("n{n}")),
                pod: PodId::new(format!("p{p}")),
                metric: if m {
                    Metric::EpcPages
                } else {
                    Metric::StdBytes
                },
                value,
            })
            .collect();
        v.sort_by_key(|s| s.time_ms);
        v
    })
}

pub fn store_of(samples: &[MetricSample]) -> SeriesStore {
    let mut store = SeriesStore::new();
    for s in samples {
        store.append(s.clone()).expect("time-ordered input");
    }
    store
}

#[derive(Debug, Clone)]
pub struct SchedCase {
    pub specs: Vec<NodeSpec>,
    /// Reservations present before the tick: (node index, std bytes, pages).
    pub existing: Vec<(usize, u64, u64)>,
    pub usage: Vec<(usize, u64, u64)>,
    pub jobs: Vec<JobSpec>,
}

const NAMES: [&str; 6] = ["alpha", "sgx-b", "charlie", "sgx-d", "echo", "sgx-f"];

fn sched_case_strategy() -> impl Strategy<Value = SchedCase> {
    let nodes = prop::collection::vec((any::<bool>(), 8u64..64, 20u64..200), 1..6);
    nodes.prop_flat_map(|nodes| {
        let specs: Vec<NodeSpec> = nodes
            .iter()
            .enumerate()
            .map(|(i, &(sgx, std_mib, pages))| {
                let name = NAMES[i];
                if sgx {
                    NodeSpec::sgx(
                        name,
                        std_mib * MIB,
                        EpcModel::with_usable(pages * PAGE).unwrap(),
                    )
                } else {
                    NodeSpec::standard(name, std_mib * MIB)
                }
            })
            .collect();
        let n = specs.len();
        let existing = prop::collection::vec((0..n, 0u64..40, 0u64..150), 0..4);
        let usage = prop::collection::vec((0..n, 0u64..64, 0u64..200), 0..4);
        let jobs = prop::collection::vec((0u64..50, any::<bool>(), 0u64..30, 1u64..120), 0..12);
        (Just(specs), existing, usage, jobs).prop_map(|(specs, existing, usage, jobs)| {
            let jobs = jobs
                .into_iter()
                .enumerate()
                .map(|(i, (submit, sgx, mib, pages))| JobSpec {
                    job_id: PodId::new(format!("j{i:02}")),
                    submit_ms: submit,
                    duration_ms: 1000,
                    kind: if sgx { JobKind::Sgx } else { JobKind::Standard },
                    requested_mem: mib * MIB,
                    actual_mem: mib * MIB,
                    declared_epc_pages: if sgx { pages } else { 0 },
                    actual_epc_pages: if sgx { pages } else { 0 },
                })
                .collect();
            SchedCase {
                specs,
                existing,
                usage,
                jobs,
            }
        })
    })
}

impl SchedCase {
    /// Cluster with the pre-existing reservations that fit, plus the usage
    /// map.
    pub fn build(&self) -> (Cluster, UsageMap) {
        let mut cluster = Cluster::new(self.specs.iter().cloned());
        for (k, &(i, mib, pages)) in self.existing.iter().enumerate() {
            let spec = &self.specs[i];
            let pages = if spec.is_sgx() { pages } else { 0 };
            let fp = Footprint {
                std_bytes: mib * MIB,
                epc_pages: pages,
                used_std_bytes: mib * MIB,
                sgx: pages > 0,
            };
            // Over-capacity reservations are refused; that is fine here.
            let _ = cluster
                .node_mut(&spec.node_id)
                .unwrap()
                .reserve(PodId::new(format!("old{k}")), fp);
        }
        let mut usage = UsageMap::new();
        for &(i, mib, pages) in &self.usage {
            let e = usage.entry(self.specs[i].node_id.clone()).or_default();
            e.std_bytes = mib * MIB;
            e.epc_pages = if self.specs[i].is_sgx() { pages } else { 0 };
        }
        (cluster, usage)
    }
}

/// Per-node load used by spread: reserved fraction of the job's resource.
fn load_oracle(job: &JobSpec, spec: &NodeSpec, std: u64, pages: u64) -> f64 {
    if job.kind == JobKind::Standard {
        std as f64 / spec.std_capacity as f64
    } else {
        pages as f64 / (spec.epc.as_ref().unwrap().usable_bytes / PAGE) as f64
    }
}

/// Replays one scheduling pass decision by decision against independent
/// bookkeeping and checks FCFS, the binpack prefix property, spread
/// optimality, SGX-node reluctance and no over-commit.
pub fn check_sched_case(case: &SchedCase, policy: Policy) -> Result<(), TestCaseError> {
    let (mut cluster, mut usage) = case.build();
    let mut reserved: BTreeMap<NodeId, (u64, u64)> = cluster
        .nodes()
        .iter()
        .map(|n| (n.id().clone(), (n.reserved_std(), n.reserved_epc_pages())))
        .collect();
    let mut measured = usage.clone();
    let specs: BTreeMap<NodeId, NodeSpec> = case
        .specs
        .iter()
        .map(|s| (s.node_id.clone(), s.clone()))
        .collect();

    let mut queue: PendingQueue = case.jobs.iter().cloned().collect();
    let placements = place_pending(&mut queue, &mut cluster, &mut usage, 0, policy)
        .map_err(|e| TestCaseError::fail(format!("model fault: {e}")))?;
    let placed: HashMap<&PodId, &NodeId> =
        placements.iter().map(|p| (&p.job_id, &p.node_id)).collect();

    let mut order: Vec<&JobSpec> = case.jobs.iter().collect();
    order.sort_by(|a, b| (a.submit_ms, &a.job_id).cmp(&(b.submit_ms, &b.job_id)));
    let placed_order: Vec<&PodId> = order
        .iter()
        .map(|j| &j.job_id)
        .filter(|id| placed.contains_key(id))
        .collect();
    let got_order: Vec<&PodId> = placements.iter().map(|p| &p.job_id).collect();
    prop_assert_eq!(placed_order, got_order, "placements out of FCFS order");

    for job in order {
        let fits = |id: &NodeId| {
            let (rs, rp) = reserved[id];
            fits_oracle(
                job,
                &specs[id],
                rs,
                rp,
                measured.get(id).copied().unwrap_or_default(),
            )
        };
        let mut plain: Vec<&NodeId> = specs.keys().filter(|id| !specs[*id].is_sgx()).collect();
        let mut sgx: Vec<&NodeId> = specs.keys().filter(|id| specs[*id].is_sgx()).collect();
        plain.sort();
        sgx.sort();
        let tiers: Vec<Vec<&NodeId>> = if job.kind == JobKind::Standard {
            vec![plain, sgx]
        } else {
            vec![sgx]
        };
        let feasible_tier = tiers.iter().find(|t| t.iter().any(|id| fits(id)));

        match (placed.get(&job.job_id), feasible_tier) {
            (None, None) => continue,
            (None, Some(_)) => {
                return Err(TestCaseError::fail(format!(
                    "{} was feasible but skipped",
                    job.job_id
                )));
            }
            (Some(node), None) => {
                return Err(TestCaseError::fail(format!(
                    "{} placed on infeasible {node}",
                    job.job_id
                )));
            }
            (Some(&node), Some(tier)) => {
                prop_assert!(fits(node), "{} placed on infeasible {}", job.job_id, node);
                prop_assert!(
                    tier.contains(&node),
                    "{} skipped a feasible preferred tier",
                    job.job_id
                );
                match policy {
                    Policy::Binpack => {
                        let first = tier.iter().find(|id| fits(id)).unwrap();
                        prop_assert_eq!(*first, node, "binpack prefix violated");
                    }
                    Policy::Spread => {
                        let score = |target: &NodeId| {
                            let loads: Vec<f64> = tier
                                .iter()
                                .map(|id| {
                                    let (mut s, mut p) = reserved[*id];
                                    if *id == target {
                                        s += job.requested_mem;
                                        p += job.declared_epc_pages;
                                    }
                                    load_oracle(job, &specs[*id], s, p)
                                })
                                .collect();
                            stddev_oracle(&loads)
                        };
                        let best = tier
                            .iter()
                            .filter(|id| fits(id))
                            .map(|id| score(id))
                            .fold(f64::INFINITY, f64::min);
                        prop_assert!(
                            score(node) <= best + 1e-12,
                            "spread picked a non-minimal node"
                        );
                    }
                }
                let r = reserved.get_mut(node).unwrap();
                r.0 += job.requested_mem;
                r.1 += job.declared_epc_pages;
                let spec = &specs[node];
                prop_assert!(r.0 <= spec.std_capacity, "standard memory over-committed");
                prop_assert!(r.1 <= spec.usable_pages(), "EPC over-committed");
                let m = measured.entry(node.clone()).or_default();
                m.std_bytes += job.requested_mem;
                m.epc_pages += job.declared_epc_pages;
            }
        }
    }
    for n in cluster.nodes() {
        prop_assert_eq!((n.reserved_std(), n.reserved_epc_pages()), reserved[n.id()]);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EngineCase {
    pub nodes: Vec<NodeSpec>,
    pub jobs: Vec<JobSpec>,
    pub cfg: EngineConfig,
}

fn engine_case_strategy() -> impl Strategy<Value = EngineCase> {
    let job = (0u64..120, 0u64..90, 0u8..10, 1u64..40, 1u64..600);
    (
        1usize..3,
        1usize..3,
        prop::collection::vec(job, 0..30),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(plain, sgx, jobs, enforce, spread, startup)| {
            let mut nodes = Vec::new();
            for i in 0..plain {
                nodes.push(NodeSpec::standard(format!("node-{i}"), 64 * MIB));
            }
            for i in 0..sgx {
                nodes.push(NodeSpec::sgx(
                    format!("sgx-{i}"),
                    32 * MIB,
                    EpcModel::with_usable(800 * PAGE).unwrap(),
                ));
            }
            let jobs = jobs
                .into_iter()
                .enumerate()
                .map(|(i, (submit_s, dur_s, kind, mib, pages))| {
                    let (kind, declared, actual) = match kind {
                        0..=3 => (JobKind::Standard, 0, 0),
                        4..=7 => (JobKind::Sgx, pages, pages),
                        // Allocates more than it declares.
                        8 => (JobKind::Sgx, pages, pages + 1 + pages / 2),
                        _ => (JobKind::MaliciousSgx, 1, pages),
                    };
                    JobSpec {
                        job_id: PodId::new(format!("j{i:02}")),
                        submit_ms: submit_s * 1000,
                        duration_ms: dur_s * 1000,
                        kind,
                        requested_mem: mib * MIB / 4,
                        actual_mem: mib * MIB / 4 + actual * PAGE,
                        declared_epc_pages: declared,
                        actual_epc_pages: actual,
                    }
                })
                .collect();
            EngineCase {
                nodes,
                jobs,
                cfg: EngineConfig {
                    policy: if spread {
                        Policy::Spread
                    } else {
                        Policy::Binpack
                    },
                    enforce_limits: enforce,
                    startup_delays: startup,
                    check_invariants: true,
                    ..EngineConfig::default()
                },
            }
        })
}

pub struct Artifacts {
    pub outcomes: Vec<u8>,
    pub pending: Vec<u8>,
    pub samples: Vec<u8>,
}

pub fn run_to_bytes(case: &EngineCase) -> Result<(epcsched::RunOutput, Artifacts), String> {
    let out = run(&case.jobs, &case.nodes, &case.cfg).map_err(|e| e.to_string())?;
    let mut a = Artifacts {
        outcomes: Vec::new(),
        pending: Vec::new(),
        samples: Vec::new(),
    };
    write_outcomes_csv(&out.outcomes, &mut a.outcomes).map_err(|e| e.to_string())?;
    write_pending_csv(&out.pending_epc, &mut a.pending).map_err(|e| e.to_string())?;
    out.samples
        .write_csv(&mut a.samples)
        .map_err(|e| e.to_string())?;
    Ok((out, a))
}

/// Whole-run properties: per-event invariants (checked by the engine in
/// invariant mode), conservation, clock order, enforcement outcome and
/// byte-identical reruns.
pub fn check_engine_case(case: &EngineCase) -> Result<(), TestCaseError> {
    let (out, bytes) = run_to_bytes(case).map_err(TestCaseError::fail)?;
    prop_assert_eq!(out.outcomes.len(), case.jobs.len());
    let ids: BTreeSet<&PodId> = out.outcomes.iter().map(|o| &o.job_id).collect();
    prop_assert_eq!(
        ids.len(),
        case.jobs.len(),
        "every job has exactly one outcome"
    );
    for o in &out.outcomes {
        match o.status {
            JobStatus::Completed => {
                let (s, f) = (o.started_ms.unwrap(), o.finished_ms.unwrap());
                prop_assert!(o.submitted_ms <= s && s <= f);
                prop_assert!(f - o.submitted_ms >= o.duration_ms);
                prop_assert_eq!(f - s, o.startup_ms + o.duration_ms);
            }
            JobStatus::Killed | JobStatus::Unfinished => {
                prop_assert!(o.started_ms.is_none() && o.finished_ms.is_none());
            }
        }
        if case.cfg.enforce_limits && o.status != JobStatus::Unfinished {
            let overuse = o.kind != JobKind::Standard && o.actual_pages > o.declared_pages;
            prop_assert_eq!(
                o.status == JobStatus::Killed,
                overuse,
                "{} kill status vs over-use",
                o.job_id
            );
        }
        if o.status == JobStatus::Unfinished {
            // Only jobs that fit no node at all may be left over.
            let fits_somewhere = case.nodes.iter().any(|n| {
                let std_ok = o.requested_mem <= n.std_capacity;
                if o.kind == JobKind::Standard {
                    std_ok
                } else {
                    std_ok && n.is_sgx() && o.declared_pages <= n.usable_pages()
                }
            });
            prop_assert!(
                !fits_somewhere,
                "{} unfinished although it fits an empty node",
                o.job_id
            );
        }
    }
    if case.cfg.enforce_limits {
        prop_assert_eq!(out.denied_capacity, 0, "capacity denial after admission");
    }
    if let Some(last) = out.pending_epc.last() {
        prop_assert_eq!(last.pending_epc_bytes, 0);
    }
    let (_, again) = run_to_bytes(case).map_err(TestCaseError::fail)?;
    prop_assert!(
        bytes.outcomes == again.outcomes,
        "outcomes differ between runs"
    );
    prop_assert!(
        bytes.pending == again.pending,
        "pending series differs between runs"
    );
    prop_assert!(
        bytes.samples == again.samples,
        "samples differ between runs"
    );
    Ok(())
}

// ------------------------------------------------------------- properties

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn report<T: std::fmt::Debug>(
    r: Result<(), proptest::test_runner::TestError<T>>,
) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

pub fn prop_query_oracle(cases: u32) -> Result<(), String> {
    let strategy = (
        samples_strategy(120),
        0u64..150_000,
        0u64..60_000,
        any::<bool>(),
    );
    report(runner(cases).run(&strategy, |(samples, now, window, epc)| {
        let store = store_of(&samples);
        let metric = if epc {
            Metric::EpcPages
        } else {
            Metric::StdBytes
        };
        let q = WindowQuery {
            metric,
            window_ms: window,
            now_ms: now,
        };
        prop_assert_eq!(
            epcsched::per_node_usage(&store, &q),
            usage_oracle(&samples, metric, now, window)
        );
        Ok(())
    }))
}

pub fn prop_append_order(cases: u32) -> Result<(), String> {
    let strategy = (samples_strategy(80), 0u64..150_000);
    report(runner(cases).run(&strategy, |(samples, now)| {
        // Stream-major order instead of time-major order.
        let mut regrouped = samples.clone();
        regrouped.sort_by(|a, b| {
            (&a.node, &a.pod, a.metric, a.time_ms).cmp(&(&b.node, &b.pod, b.metric, b.time_ms))
        });
        let a = store_of(&samples);
        let b = store_of(&regrouped);
        for metric in [Metric::EpcPages, Metric::StdBytes] {
            let q = WindowQuery::new(metric, now);
            prop_assert_eq!(
                epcsched::per_node_usage(&a, &q),
                epcsched::per_node_usage(&b, &q)
            );
        }
        Ok(())
    }))
}

pub fn prop_monotone_window(cases: u32) -> Result<(), String> {
    let strategy = (
        samples_strategy(80),
        0u64..150_000,
        0u64..40_000,
        0u64..40_000,
    );
    report(runner(cases).run(&strategy, |(samples, now, w, extra)| {
        let store = store_of(&samples);
        let small = epcsched::per_node_usage(
            &store,
            &WindowQuery {
                metric: Metric::EpcPages,
                window_ms: w,
                now_ms: now,
            },
        );
        let big = epcsched::per_node_usage(
            &store,
            &WindowQuery {
                metric: Metric::EpcPages,
                window_ms: w + extra,
                now_ms: now,
            },
        );
        for (node, v) in small {
            prop_assert!(big.get(&node).copied().unwrap_or(0) >= v);
        }
        Ok(())
    }))
}

pub fn prop_reserve_release_inverse(cases: u32) -> Result<(), String> {
    let ops = prop::collection::vec((0u8..8, 0u64..3000, 0u64..30_000, any::<bool>()), 0..40);
    report(runner(cases).run(&ops, |ops| {
        let mut cluster = Cluster::new([
            NodeSpec::standard("plain", 8 * 1024 * MIB),
            NodeSpec::sgx("sgx", 4 * 1024 * MIB, EpcModel::default()),
        ]);
        let fresh = cluster.clone();
        let mut held: Vec<(NodeId, PodId)> = Vec::new();
        for (i, (pod, mib, pages, sgx)) in ops.into_iter().enumerate() {
            let node = NodeId::from(if sgx { "sgx" } else { "plain" });
            let pod = PodId::new(format!("p{pod}"));
            if let Some(k) = held.iter().position(|(_, p)| *p == pod) {
                let (n, p) = held.remove(k);
                cluster.node_mut(&n).unwrap().release(&p).unwrap();
                continue;
            }
            let before = cluster.clone();
            let fp = Footprint {
                std_bytes: mib * MIB,
                epc_pages: if sgx { pages } else { 0 },
                used_std_bytes: mib * MIB,
                sgx,
            };
            match cluster.node_mut(&node).unwrap().reserve(pod.clone(), fp) {
                Ok(()) => {
                    let n = cluster.node(&node).unwrap();
                    prop_assert!(n.reserved_std() <= n.spec.std_capacity);
                    prop_assert!(n.reserved_epc_pages() <= n.spec.usable_pages());
                    if i % 3 == 0 {
                        cluster.node_mut(&node).unwrap().release(&pod).unwrap();
                        prop_assert_eq!(&cluster, &before, "release did not undo reserve");
                    } else {
                        held.push((node, pod));
                    }
                }
                Err(_) => prop_assert_eq!(&cluster, &before, "failed reserve changed state"),
            }
        }
        for (n, p) in held.drain(..).rev() {
            cluster.node_mut(&n).unwrap().release(&p).unwrap();
        }
        prop_assert_eq!(cluster, fresh);
        Ok(())
    }))
}

pub fn prop_driver_conservation(cases: u32) -> Result<(), String> {
    let ops = prop::collection::vec((0u8..3, 0u8..6, 0u64..400, any::<bool>()), 0..60);
    let strategy = (ops, any::<bool>(), prop::collection::vec(0u64..300, 6));
    report(runner(cases).run(&strategy, |(ops, enforce, limits)| {
        let node = NodeId::from("s");
        let mut d = DriverState::from_nodes([(node.clone(), 1000)]);
        for (i, l) in limits.iter().enumerate() {
            d.register_limit(&PodId::new(format!("p{i}")), *l).unwrap();
        }
        let mut owned: HashMap<PodId, u64> = HashMap::new();
        for (op, pod, pages, all) in ops {
            let pod = PodId::new(format!("p{pod}"));
            let mine = owned.get(&pod).copied().unwrap_or(0);
            match op {
                0 | 1 => {
                    let free_before = 1000 - owned.values().sum::<u64>();
                    let got = d.enclave_init(&node, &pod, pages, enforce).unwrap();
                    let limit = limits[pod.as_str()[1..].parse::<usize>().unwrap()];
                    let expect = if enforce && mine + pages > limit {
                        InitOutcome::DeniedLimit
                    } else if pages > free_before {
                        InitOutcome::DeniedCapacity
                    } else {
                        InitOutcome::Granted
                    };
                    prop_assert_eq!(got, expect);
                    if got == InitOutcome::Granted {
                        *owned.entry(pod.clone()).or_default() += pages;
                    }
                }
                _ => {
                    let amount = if all { mine } else { pages.min(mine) };
                    if mine > 0 {
                        d.enclave_release(&node, &pod, amount).unwrap();
                        *owned.get_mut(&pod).unwrap() -= amount;
                    } else {
                        prop_assert!(d.enclave_release(&node, &pod, 1).is_err());
                    }
                }
            }
            let sum: u64 = owned.values().sum();
            let epc = d.node(&node).unwrap();
            prop_assert_eq!(epc.total_pages, epc.free_pages + sum);
            prop_assert_eq!(epc.owned_sum(), sum);
            prop_assert_eq!(d.pages_of(&pod), owned.get(&pod).copied().unwrap_or(0));
            prop_assert!(d.check_invariants(enforce).is_ok());
        }
        Ok(())
    }))
}

pub fn prop_scheduler_decisions(cases: u32) -> Result<(), String> {
    let strategy = (sched_case_strategy(), any::<bool>());
    report(runner(cases).run(&strategy, |(case, spread)| {
        check_sched_case(
            &case,
            if spread {
                Policy::Spread
            } else {
                Policy::Binpack
            },
        )
    }))
}

pub fn prop_engine_runs(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&engine_case_strategy(), |case| check_engine_case(&case)))
}

pub fn prop_startup_shape(cases: u32) -> Result<(), String> {
    let m = EpcModel::default();
    let usable = m.usable_bytes;
    let strategy = (0u64..512 * MIB, 64 * 1024u64..MIB);
    report(runner(cases).run(&strategy, |(a, d)| {
        let rel = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1e-300);
        let b = a + d;
        let slope = (startup_delay(b, &m) - startup_delay(a, &m)) / (d as f64 / MIB as f64);
        if b <= usable {
            prop_assert!((slope - 1.6).abs() < 1e-6, "slope below {slope}");
        } else if a > usable {
            prop_assert!((slope - 4.5).abs() < 1e-6, "slope above {slope}");
        }
        prop_assert!(rel(startup_delay(a, &m), startup_oracle_ms(a)));
        Ok(())
    }))?;
    // The one discontinuity sits at the usable size: 200 + (4.5 - 1.6) * 93.5.
    let below = startup_delay(usable, &m);
    let above = startup_delay(usable + 1, &m);
    let jump = above - below - 4.5 / MIB as f64;
    let expected = 200.0 + (4.5 - 1.6) * 93.5;
    if (jump - expected).abs() > 1e-9 * expected {
        return Err(format!("jump {jump} != {expected}"));
    }
    Ok(())
}

pub fn prop_pipeline(cases: u32) -> Result<(), String> {
    let record = (0u64..7200, 0u64..300, 0u32..1000, 0u32..1000);
    let strategy = (
        prop::collection::vec(record, 0..200),
        1usize..50,
        any::<u64>(),
        0.0f64..1.0,
        0.0f64..1.0,
    );
    report(runner(cases).run(&strategy, |(raw, stride, seed, f1, f2)| {
        let mut records: Vec<RawJobRecord> = raw
            .into_iter()
            .enumerate()
            .map(|(i, (s, d, a, m))| RawJobRecord {
                job_id: format!("r{i}"),
                submit_ms: s * 1000,
                duration_ms: d * 1000,
                assigned_mem_frac: a as f64 / 1000.0,
                max_mem_frac: m as f64 / 1000.0,
            })
            .collect();
        records.sort_by(|a, b| (a.submit_ms, &a.job_id).cmp(&(b.submit_ms, &b.job_id)));
        let cfg = ScalingConfig {
            slice_start_s: 1000.0,
            slice_end_s: 4600.0,
            sampling_stride: stride,
            rng_seed: seed,
            ..ScalingConfig::default()
        };
        let in_slice = records
            .iter()
            .filter(|r| (1_000_000..4_600_000).contains(&r.submit_ms))
            .count();
        let sampled = slice_and_sample(&records, &cfg);
        prop_assert_eq!(sampled.len(), in_slice.div_ceil(stride));

        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let a = materialize(
            &sampled,
            &ScalingConfig {
                sgx_fraction: lo,
                ..cfg.clone()
            },
        );
        let b = materialize(
            &sampled,
            &ScalingConfig {
                sgx_fraction: hi,
                ..cfg.clone()
            },
        );
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(
                !(x.kind.is_sgx() && !y.kind.is_sgx()),
                "raising the fraction untagged {}",
                x.job_id
            );
            prop_assert!(x.check_invariants().is_ok() && y.check_invariants().is_ok());
        }
        let mut first = Vec::new();
        let mut second = Vec::new();
        write_jobs_csv(&a, &mut first).unwrap();
        write_jobs_csv(
            &materialize(
                &sampled,
                &ScalingConfig {
                    sgx_fraction: lo,
                    ..cfg
                },
            ),
            &mut second,
        )
        .unwrap();
        prop_assert!(first == second, "materialize is not deterministic");
        Ok(())
    }))
}

/// Outcome rows as written to disk.
pub fn rows_of(out: &epcsched::RunOutput) -> Vec<OutcomeRow> {
    out.outcomes.iter().map(OutcomeRow::from).collect()
}
