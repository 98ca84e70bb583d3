//! Parameter sweeps over the simulator and the artifact directory layout.
//!
//! A sweep is the cartesian product of policies, enforcement settings, EPC
//! sizes, SGX fractions and (optionally) runs with and without malicious
//! jobs. Every point writes `jobs.csv`, `outcomes.csv`, `pending_epc.csv`,
//! `samples.csv` and `summary.json` into its own subdirectory; `sweep.json`
//! at the top lists the points.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    load_cluster_file, parse_cluster_entries, reference_cluster, ClusterFileError, EpcModel,
    NodeEntry, NodeSpec, MIB,
};
use crate::engine::{self, read_outcomes_csv, read_pending_csv, EngineConfig, EngineError};
use crate::report::{self, PointData, Summary};
use crate::scheduler::Policy;
use crate::trace::{
    self, inject_malicious, materialize, read_jobs_csv, slice_and_sample, synthetic,
    write_jobs_csv, MaliciousSpec, RawJobRecord, ScalingConfig, TraceError, TraceFormat,
};

/// A single value or a list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterSource {
    File(PathBuf),
    Inline(Vec<NodeEntry>),
}

fn default_policy() -> OneOrMany<Policy> {
    OneOrMany::One(Policy::Binpack)
}

fn default_enforce() -> OneOrMany<bool> {
    OneOrMany::One(true)
}

fn default_format() -> TraceFormat {
    TraceFormat::CanonicalCsv
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Defaults to two plain and two SGX nodes.
    #[serde(default)]
    pub cluster: Option<ClusterSource>,
    /// Defaults to the bundled synthetic trace.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub trace_format: TraceFormat,
    /// Defaults to the standard slice and stride for an external trace and
    /// to keeping every job of the bundled trace.
    #[serde(default)]
    pub scaling: Option<ScalingConfig>,
    #[serde(default = "default_policy")]
    pub policy: OneOrMany<Policy>,
    #[serde(default = "default_enforce")]
    pub enforce_limits: OneOrMany<bool>,
    /// Usable EPC per SGX node, in MiB. Absent: keep the cluster's EPC.
    #[serde(default)]
    pub epc_usable_mib: Option<Vec<f64>>,
    /// Read `epc_usable_mib` as total EPC sizes and derive the usable part
    /// with the default usable-to-total ratio.
    #[serde(default)]
    pub epc_sizes_are_total: bool,
    /// Absent: use `scaling.sgx_fraction`.
    #[serde(default)]
    pub sgx_fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub malicious: Option<MaliciousSpec>,
    /// With `malicious` set, also run every point without malicious jobs.
    #[serde(default)]
    pub malicious_baseline: bool,
    #[serde(default = "default_scheduler_period")]
    pub scheduler_period_ms: u64,
    #[serde(default = "default_probe_period")]
    pub probe_period_ms: u64,
    #[serde(default = "default_window")]
    pub window_ms: u64,
    #[serde(default = "yes")]
    pub startup_delays: bool,
    #[serde(default)]
    pub check_invariants: bool,
    pub output_dir: PathBuf,
}

fn default_scheduler_period() -> u64 {
    EngineConfig::default().scheduler_period_ms
}

fn default_probe_period() -> u64 {
    EngineConfig::default().probe_period_ms
}

fn default_window() -> u64 {
    EngineConfig::default().window_ms
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error(transparent)]
    Cluster(#[from] ClusterFileError),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("sweep point {point}: {source}")]
    Engine { point: String, source: EngineError },
}

impl ExperimentError {
    /// 2 for configuration errors, 3 for unreadable or unwritable files, 1
    /// for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Cluster(ClusterFileError::Io(_)) => 3,
            ExperimentError::Cluster(_) => 2,
            ExperimentError::Io { .. }
            | ExperimentError::Trace { .. }
            | ExperimentError::Artifact { .. } => 3,
            ExperimentError::Engine {
                source: EngineError::Config(_),
                ..
            } => 2,
            ExperimentError::Engine { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a JSON config. Relative paths inside it are resolved against the
/// config file's directory.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(ClusterSource::File(p)) = &mut cfg.cluster {
        resolve(p);
    }
    if let Some(p) = &mut cfg.trace {
        resolve(p);
    }
    resolve(&mut cfg.output_dir);
    Ok(cfg)
}

/// Parameters of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub name: String,
    pub policy: Policy,
    pub enforce_limits: bool,
    pub epc_usable_mib: Option<f64>,
    pub sgx_fraction: f64,
    pub malicious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub point: SweepPoint,
    #[serde(flatten)]
    pub summary: Summary,
}

impl ExperimentConfig {
    fn scaling(&self) -> ScalingConfig {
        match (&self.scaling, &self.trace) {
            (Some(s), _) => s.clone(),
            (None, Some(_)) => ScalingConfig::default(),
            (None, None) => ScalingConfig::passthrough(3600.0),
        }
    }

    fn engine_config(&self, point: &SweepPoint) -> EngineConfig {
        EngineConfig {
            policy: point.policy,
            enforce_limits: point.enforce_limits,
            scheduler_period_ms: self.scheduler_period_ms,
            probe_period_ms: self.probe_period_ms,
            window_ms: self.window_ms,
            startup_delays: self.startup_delays,
            check_invariants: self.check_invariants,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.scaling().validate().map_err(ExperimentError::Config)?;
        if self.policy.to_vec().is_empty() || self.enforce_limits.to_vec().is_empty() {
            return bad("policy and enforce_limits sweeps must not be empty".into());
        }
        if let Some(sizes) = &self.epc_usable_mib {
            if sizes.is_empty() {
                return bad("epc_usable_mib must not be empty".into());
            }
            if let Some(s) = sizes.iter().find(|s| !(**s > 0.0)) {
                return bad(format!("EPC size {s} MiB must be positive"));
            }
        }
        if let Some(fracs) = &self.sgx_fractions {
            if fracs.is_empty() {
                return bad("sgx_fractions must not be empty".into());
            }
            if let Some(f) = fracs.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return bad(format!("sgx fraction {f} outside [0, 1]"));
            }
        }
        if let Some(m) = &self.malicious {
            m.validate().map_err(ExperimentError::Config)?;
        }
        EngineConfig {
            scheduler_period_ms: self.scheduler_period_ms,
            probe_period_ms: self.probe_period_ms,
            window_ms: self.window_ms,
            ..EngineConfig::default()
        }
        .validate()
        .map_err(ExperimentError::Config)
    }

    /// All sweep points in a fixed order.
    pub fn points(&self) -> Vec<SweepPoint> {
        let sizes: Vec<Option<f64>> = match &self.epc_usable_mib {
            Some(s) => s.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let fracs = self
            .sgx_fractions
            .clone()
            .unwrap_or_else(|| vec![self.scaling().sgx_fraction]);
        let malicious: Vec<bool> = match (&self.malicious, self.malicious_baseline) {
            (None, _) => vec![false],
            (Some(_), false) => vec![true],
            (Some(_), true) => vec![false, true],
        };
        let mut points = Vec::new();
        for policy in self.policy.to_vec() {
            for enforce in self.enforce_limits.to_vec() {
                for &size in &sizes {
                    for &frac in &fracs {
                        for &mal in &malicious {
                            let mut name = format!(
                                "p{:02}_{policy}_{}",
                                points.len(),
                                if enforce { "enforced" } else { "unenforced" }
                            );
                            if let Some(s) = size {
                                name += &format!("_epc{s}mib");
                            }
                            name += &format!("_sgx{}", frac * 100.0);
                            if mal {
                                name += "_malicious";
                            }
                            points.push(SweepPoint {
                                name,
                                policy,
                                enforce_limits: enforce,
                                epc_usable_mib: size,
                                sgx_fraction: frac,
                                malicious: mal,
                            });
                        }
                    }
                }
            }
        }
        points
    }

    fn base_cluster(&self) -> Result<Vec<NodeSpec>, ExperimentError> {
        Ok(match &self.cluster {
            None => reference_cluster(),
            Some(ClusterSource::File(p)) => load_cluster_file(p)?,
            Some(ClusterSource::Inline(entries)) => parse_cluster_entries(entries.clone())?,
        })
    }

    fn load_records(&self) -> Result<Vec<RawJobRecord>, ExperimentError> {
        match &self.trace {
            None => Ok(synthetic::bundled_trace()),
            Some(path) => {
                let parsed = trace::parse_trace(path, self.trace_format).map_err(|source| {
                    ExperimentError::Trace {
                        path: path.clone(),
                        source,
                    }
                })?;
                if !parsed.rejected.is_empty() {
                    log::warn!(
                        "{}: {} rows rejected",
                        path.display(),
                        parsed.rejected.len()
                    );
                }
                Ok(parsed.records)
            }
        }
    }
}

/// Builds the cluster and job list for one point.
pub fn prepare_point(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    records: &[RawJobRecord],
    base_cluster: &[NodeSpec],
) -> Result<(Vec<NodeSpec>, Vec<crate::trace::JobSpec>), ExperimentError> {
    let mut nodes = base_cluster.to_vec();
    if let Some(mib) = point.epc_usable_mib {
        let bytes = (mib * MIB as f64).round() as u64;
        let model = if cfg.epc_sizes_are_total {
            EpcModel::with_total_scaled(bytes)
        } else {
            EpcModel::with_usable(bytes)
        }
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
        for n in nodes.iter_mut().filter(|n| n.is_sgx()) {
            n.epc = Some(model.clone());
        }
    }
    let scaling = ScalingConfig {
        sgx_fraction: point.sgx_fraction,
        ..cfg.scaling()
    };
    let mut jobs = materialize(&slice_and_sample(records, &scaling), &scaling);
    if point.malicious {
        let spec = cfg
            .malicious
            .as_ref()
            .expect("malicious points need a spec");
        let sgx: Vec<&NodeSpec> = nodes.iter().filter(|n| n.is_sgx()).collect();
        let Some(first) = sgx.first() else {
            return Err(ExperimentError::Config(
                "malicious jobs need at least one SGX node".into(),
            ));
        };
        jobs = inject_malicious(jobs, spec, sgx.len(), first.usable_pages());
    }
    Ok((nodes, jobs))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(BufWriter<fs::File>) -> Result<(), String>,
) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    f(BufWriter::new(file)).map_err(|message| ExperimentError::Artifact {
        path: path.to_path_buf(),
        message,
    })
}

fn run_point(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    records: &[RawJobRecord],
    base_cluster: &[NodeSpec],
) -> Result<PointSummary, ExperimentError> {
    let (nodes, jobs) = prepare_point(cfg, point, records, base_cluster)?;
    let out = engine::run(&jobs, &nodes, &cfg.engine_config(point)).map_err(|source| {
        ExperimentError::Engine {
            point: point.name.clone(),
            source,
        }
    })?;
    if out.denied_capacity > 0 {
        log::info!(
            "{}: {} enclave inits denied for lack of free EPC",
            point.name,
            out.denied_capacity
        );
    }
    let dir = cfg.output_dir.join(&point.name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let s = |e: csv::Error| e.to_string();
    write_file(&dir.join("jobs.csv"), |w| {
        write_jobs_csv(&jobs, w).map_err(|e| e.to_string())
    })?;
    write_file(&dir.join("outcomes.csv"), |w| {
        engine::write_outcomes_csv(&out.outcomes, w).map_err(s)
    })?;
    write_file(&dir.join("pending_epc.csv"), |w| {
        engine::write_pending_csv(&out.pending_epc, w).map_err(s)
    })?;
    write_file(&dir.join("samples.csv"), |w| {
        out.samples.write_csv(w).map_err(s)
    })?;
    let rows: Vec<_> = out.outcomes.iter().map(engine::OutcomeRow::from).collect();
    let summary = PointSummary {
        point: point.clone(),
        summary: report::summarize(&rows, &jobs),
    };
    write_file(&dir.join("summary.json"), |w| {
        serde_json::to_writer_pretty(w, &summary).map_err(|e| e.to_string())
    })?;
    Ok(summary)
}

/// Runs every sweep point (in parallel) and writes the artifact tree.
/// Returns the point summaries in sweep order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PointSummary>, ExperimentError> {
    cfg.validate()?;
    let base_cluster = cfg.base_cluster()?;
    let records = cfg.load_records()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let points = cfg.points();
    let summaries = points
        .par_iter()
        .map(|p| run_point(cfg, p, &records, &base_cluster))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = cfg.output_dir.join("sweep.json");
    write_file(&manifest, |w| {
        serde_json::to_writer_pretty(w, &points).map_err(|e| e.to_string())
    })?;
    Ok(summaries)
}

fn open(path: &Path) -> Result<BufReader<fs::File>, ExperimentError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(io_err(path))
}

fn artifact<T>(path: &Path, r: Result<T, String>) -> Result<T, ExperimentError> {
    r.map_err(|message| ExperimentError::Artifact {
        path: path.to_path_buf(),
        message,
    })
}

/// Reads one point directory back.
pub fn load_point(dir: &Path) -> Result<PointData, ExperimentError> {
    let outcomes_path = dir.join("outcomes.csv");
    let pending_path = dir.join("pending_epc.csv");
    let jobs_path = dir.join("jobs.csv");
    let outcomes = artifact(&outcomes_path, read_outcomes_csv(open(&outcomes_path)?))?;
    let pending = artifact(&pending_path, read_pending_csv(open(&pending_path)?))?;
    let jobs = artifact(
        &jobs_path,
        read_jobs_csv(open(&jobs_path)?).map_err(|e| e.to_string()),
    )?;
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(PointData {
        label,
        outcomes,
        pending,
        jobs,
    })
}

/// Loads a point directory, or every point listed in a sweep manifest.
pub fn load_points(dir: &Path) -> Result<Vec<PointData>, ExperimentError> {
    let manifest = dir.join("sweep.json");
    if !manifest.exists() {
        return Ok(vec![load_point(dir)?]);
    }
    let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let points: Vec<SweepPoint> = artifact(
        &manifest,
        serde_json::from_str(&text).map_err(|e| e.to_string()),
    )?;
    points
        .iter()
        .map(|p| load_point(&dir.join(&p.name)))
        .collect()
}
