use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use epcsched::experiment::{load_experiment_config, load_points, run_experiment};
use epcsched::report::{render_figure, BucketEdges};
use epcsched::trace::synthetic::{generate, SyntheticConfig};
use epcsched::trace::{
    materialize, parse_trace, slice_and_sample, write_canonical_csv, write_jobs_csv, ScalingConfig,
    TraceFormat,
};
use epcsched::{GIB, MIB};

#[derive(Parser)]
#[command(
    name = "epcsched",
    version,
    about = "SGX-aware cluster scheduling simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Canonical,
    Borg,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print gnuplot data for a figure from one or more artifact directories.
    Report {
        /// A sweep output directory or a single point directory.
        #[arg(long, required = true)]
        dir: Vec<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(6..=10))]
        figure: u32,
        /// Lower bucket edges for SGX jobs, in MiB (figure 8).
        #[arg(long, value_delimiter = ',')]
        sgx_edges_mib: Option<Vec<f64>>,
        /// Lower bucket edges for standard jobs, in GiB (figure 8).
        #[arg(long, value_delimiter = ',')]
        std_edges_gib: Option<Vec<f64>>,
    },
    /// Slice, sample and scale a trace into a job list.
    Scale {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "canonical")]
        format: Format,
        #[arg(long, default_value_t = 6480.0)]
        slice_start_s: f64,
        #[arg(long, default_value_t = 10080.0)]
        slice_end_s: f64,
        #[arg(long, default_value_t = 1200)]
        stride: usize,
        #[arg(long, default_value_t = 0.0)]
        sgx_fraction: f64,
        #[arg(long, default_value_t = 32.0)]
        std_multiplier_gib: f64,
        #[arg(long, default_value_t = 93.5)]
        sgx_multiplier_mib: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic trace in canonical CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Mean of the assigned-memory fraction distribution.
        #[arg(long)]
        mean_frac: Option<f64>,
        #[arg(long)]
        span_s: Option<f64>,
    },
}

/// An error together with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

const CONFIG: u8 = 2;
const IO: u8 = 3;

fn create(path: &PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(fail(IO))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_experiment_config(&config).map_err(|e| Failure {
                code: e.exit_code() as u8,
                error: e.into(),
            })?;
            let summaries = run_experiment(&cfg).map_err(|e| Failure {
                code: e.exit_code() as u8,
                error: e.into(),
            })?;
            let mut out = io::stdout().lock();
            let _ = writeln!(out, "point\tjobs\tcompleted\tkilled\tunfinished\tmakespan_s\ttotal_waiting_s\ttotal_turnaround_s");
            for s in &summaries {
                let m = &s.summary;
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}",
                    s.point.name,
                    m.jobs,
                    m.completed,
                    m.killed,
                    m.unfinished,
                    m.makespan_ms as f64 / 1000.0,
                    m.total_waiting_ms as f64 / 1000.0,
                    m.total_turnaround_ms as f64 / 1000.0
                );
            }
            log::info!("artifacts written to {}", cfg.output_dir.display());
        }
        Command::Report {
            dir,
            figure,
            sgx_edges_mib,
            std_edges_gib,
        } => {
            let mut edges = BucketEdges::default();
            if let Some(e) = sgx_edges_mib {
                edges.sgx = e.iter().map(|m| (m * MIB as f64).round() as u64).collect();
            }
            if let Some(e) = std_edges_gib {
                edges.standard = e.iter().map(|g| (g * GIB as f64).round() as u64).collect();
            }
            let mut points = Vec::new();
            for d in &dir {
                points.extend(load_points(d).map_err(|e| Failure {
                    code: e.exit_code() as u8,
                    error: e.into(),
                })?);
            }
            let text = render_figure(figure, &points, &edges)
                .ok_or_else(|| anyhow!("no data for figure {figure}"))
                .map_err(fail(CONFIG))?;
            io::stdout()
                .lock()
                .write_all(text.as_bytes())
                .context("writing report")
                .map_err(fail(IO))?;
        }
        Command::Scale {
            input,
            out,
            format,
            slice_start_s,
            slice_end_s,
            stride,
            sgx_fraction,
            std_multiplier_gib,
            sgx_multiplier_mib,
            seed,
        } => {
            let cfg = ScalingConfig {
                slice_start_s,
                slice_end_s,
                sampling_stride: stride,
                sgx_fraction,
                std_multiplier: (std_multiplier_gib * GIB as f64).round() as u64,
                sgx_multiplier: (sgx_multiplier_mib * MIB as f64).round() as u64,
                rng_seed: seed,
            };
            cfg.validate()
                .map_err(|e| anyhow!(e))
                .map_err(fail(CONFIG))?;
            let format = match format {
                Format::Canonical => TraceFormat::CanonicalCsv,
                Format::Borg => TraceFormat::BorgTables,
            };
            let parsed = parse_trace(&input, format)
                .with_context(|| format!("reading {}", input.display()))
                .map_err(fail(IO))?;
            for r in &parsed.rejected {
                log::warn!("line {}: {}", r.line, r.reason);
            }
            let jobs = materialize(&slice_and_sample(&parsed.records, &cfg), &cfg);
            write_jobs_csv(&jobs, create(&out)?)
                .with_context(|| format!("writing {}", out.display()))
                .map_err(fail(IO))?;
            eprintln!("{} jobs written to {}", jobs.len(), out.display());
        }
        Command::Synth {
            out,
            jobs,
            seed,
            mean_frac,
            span_s,
        } => {
            let mut cfg = SyntheticConfig::default();
            if let Some(m) = mean_frac {
                if !(m > 0.0) {
                    return Err(fail(CONFIG)(anyhow!("mean fraction must be positive")));
                }
                cfg.mean_frac = m;
            }
            if let Some(s) = span_s {
                cfg.span_s = s;
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            write_canonical_csv(&generate(&cfg), create(&out)?)
                .with_context(|| format!("writing {}", out.display()))
                .map_err(fail(IO))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
