//! The `spanprof` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 malformed input,
//! 3 I/O failure. Every flag can also be set through the environment variable
//! shown in `--help`; flags win over the environment.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{build_report, Report, ReportOptions};
use crate::bench::{
    AccuracyOutcome, BenchError, Harness, NestingProfile, OverheadOutcome, RunOptions, WorkloadMode, WorkloadSpec,
    DEFAULT_ITERATIONS, DEFAULT_RUNS, DEFAULT_WARMUP,
};
use crate::calibration::{calibrate, CalibrationConfig, CalibrationError, CostModel, SampleKind};
use crate::codec::{load_trace_dir, LoadError};
use crate::cycles::{open_source, CycleError, CycleSourceDescriptor, SourceSelection};
use crate::reconstruct::{ApplicationProfile, ReconstructError};
use crate::stats::{self, IqrFence};

pub const BENCH_SUMMARY_FILE: &str = "bench.json";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Parser)]
#[command(name = "spanprof", version, about = "Cycle-level profiler for sequential and fork/join data pipelines")]
pub struct Cli {
    /// Cycle source: auto, hardware, ticks, scripted[:STEP].
    #[arg(long, global = true, default_value = "auto", env = "SPANPROF_SOURCE")]
    pub source: SourceSelection,

    /// Print progress and warnings.
    #[arg(short, long, global = true, env = "SPANPROF_VERBOSE")]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the instrumentation cost constants on this machine.
    Calibrate(CalibrateArgs),
    /// Reconstruct traces, compensate them and write a JSON report.
    Analyze(AnalyzeArgs),
    /// Render a report: hot locations, heatmap CSV/SVG, load balance.
    Report(ReportArgs),
    /// Run a synthetic workload, optionally profiled or as an accuracy/overhead experiment.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Anon,
    Prim,
    Supp,
    All,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Span pairs generated per cost constant.
    #[arg(long, default_value_t = crate::calibration::FULL_PAIRS_PER_COST, env = "SPANPROF_CALIBRATE_PAIRS")]
    pub pairs: usize,
    #[arg(long, env = "SPANPROF_CALIBRATE_OUT")]
    pub out: PathBuf,
    /// Serialize cycle reads (the default).
    #[arg(long, overrides_with = "plain_reads")]
    pub serialized_reads: bool,
    /// Use unserialized cycle reads.
    #[arg(long, env = "SPANPROF_CALIBRATE_PLAIN_READS")]
    pub plain_reads: bool,
    #[arg(long, value_enum, default_value = "all", env = "SPANPROF_CALIBRATE_KIND")]
    pub kind: KindArg,
    /// Tukey fence multiplier for outlier removal.
    #[arg(long, default_value_t = 1.5, env = "SPANPROF_CALIBRATE_FENCE_K")]
    pub fence_k: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory of `.sptr` trace files.
    #[arg(long, env = "SPANPROF_ANALYZE_TRACES")]
    pub traces: PathBuf,
    /// Location file; defaults to `locations.tsv` inside the trace directory.
    #[arg(long, env = "SPANPROF_ANALYZE_LOCATIONS")]
    pub locations: Option<PathBuf>,
    /// Cost model; without it spans are reported uncompensated.
    #[arg(long, env = "SPANPROF_ANALYZE_COSTS")]
    pub costs: Option<PathBuf>,
    /// Report destination; standard output when absent.
    #[arg(long, env = "SPANPROF_ANALYZE_OUT")]
    pub out: Option<PathBuf>,
    /// Bench summary whose baseline is used to evaluate accuracy.
    #[arg(long, env = "SPANPROF_ANALYZE_BASELINE")]
    pub baseline: Option<PathBuf>,
    /// Count idle workers up to this pool size in the load-balance CV.
    #[arg(long, env = "SPANPROF_ANALYZE_POOL_SIZE")]
    pub pool_size: Option<usize>,
    /// Include one record per span.
    #[arg(long, env = "SPANPROF_ANALYZE_PER_SPAN")]
    pub per_span: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in", env = "SPANPROF_REPORT_IN")]
    pub input: PathBuf,
    /// Heatmap CSV destination.
    #[arg(long, env = "SPANPROF_REPORT_HEATMAP")]
    pub heatmap: Option<PathBuf>,
    /// Heatmap SVG destination.
    #[arg(long, env = "SPANPROF_REPORT_SVG")]
    pub svg: Option<PathBuf>,
    #[arg(long, default_value_t = 10, env = "SPANPROF_REPORT_HOT_LOCATIONS")]
    pub hot_locations: usize,
    #[arg(long, env = "SPANPROF_REPORT_POOL_SIZE")]
    pub pool_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Seq,
    Par,
    Mixed,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "synthetic", env = "SPANPROF_BENCH_WORKLOAD")]
    pub workload: String,
    #[arg(long, value_enum, default_value = "seq", env = "SPANPROF_BENCH_MODE")]
    pub mode: ModeArg,
    /// Top-level streams (seq, mixed) or tasks of the parallel stream (par).
    #[arg(long, default_value_t = 1000, env = "SPANPROF_BENCH_SPANS")]
    pub spans: usize,
    /// Work cycles per span.
    #[arg(long, default_value_t = 1000, env = "SPANPROF_BENCH_CPS")]
    pub cps: u64,
    /// Nest every top-level stream in a chain of this depth.
    #[arg(long, conflicts_with = "fanout", env = "SPANPROF_BENCH_DEPTH")]
    pub depth: Option<usize>,
    /// Run this many inner streams inside each top-level stream.
    #[arg(long, env = "SPANPROF_BENCH_FANOUT")]
    pub fanout: Option<usize>,
    /// Fraction of parallel work moved onto the first task.
    #[arg(long, env = "SPANPROF_BENCH_SKEW")]
    pub skew: Option<f64>,
    /// Relative random variation of per-span work.
    #[arg(long, default_value_t = 0.0, env = "SPANPROF_BENCH_JITTER")]
    pub jitter: f64,
    #[arg(long, default_value_t = 0, env = "SPANPROF_BENCH_SEED")]
    pub seed: u64,
    #[arg(long, env = "SPANPROF_BENCH_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_WARMUP, env = "SPANPROF_BENCH_WARMUP")]
    pub warmup: usize,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS, env = "SPANPROF_BENCH_ITERATIONS")]
    pub iterations: usize,
    /// Also run profiled iterations and dump their traces.
    #[arg(long, env = "SPANPROF_BENCH_PROFILE")]
    pub profile: bool,
    #[arg(long, env = "SPANPROF_BENCH_COSTS")]
    pub costs: Option<PathBuf>,
    /// Run the accuracy experiment.
    #[arg(long, env = "SPANPROF_BENCH_ACCURACY")]
    pub accuracy: bool,
    #[arg(long, default_value_t = DEFAULT_RUNS, env = "SPANPROF_BENCH_RUNS")]
    pub runs: usize,
    /// Run the overhead experiment with this many plain/profiled pairs.
    #[arg(long, env = "SPANPROF_BENCH_OVERHEAD_PAIRS")]
    pub overhead_pairs: Option<usize>,
    #[arg(long, env = "SPANPROF_BENCH_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Malformed(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Malformed(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Malformed(e.to_string()),
        }
    }
}

impl From<ReconstructError> for CliError {
    fn from(e: ReconstructError) -> Self {
        CliError::Malformed(e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Malformed(e.to_string()),
        }
    }
}

impl From<CycleError> for CliError {
    fn from(e: CycleError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidSpec(_) | BenchError::Source(_) => CliError::Usage(e.to_string()),
            BenchError::Recorder(_) => CliError::Io(e.to_string()),
            _ => CliError::Malformed(e.to_string()),
        }
    }
}

/// What `bench` writes to `bench.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub spec: WorkloadSpec,
    pub source: CycleSourceDescriptor,
    pub warmup: usize,
    pub iterations: usize,
    pub plain_seconds: Vec<f64>,
    pub baseline_cycles: Vec<f64>,
    pub mean_baseline_cycles: f64,
    pub baseline_cv: f64,
    pub profiled_seconds: Vec<f64>,
    pub trace_dirs: Vec<PathBuf>,
    pub accuracy: Option<AccuracyOutcome>,
    pub overhead: Option<OverheadOutcome>,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Calibrate(a) => run_calibrate(cli, a),
        Command::Analyze(a) => run_analyze(cli, a),
        Command::Report(a) => run_report(a),
        Command::Bench(a) => run_bench(cli, a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn run_calibrate(cli: &Cli, a: &CalibrateArgs) -> Result<(), CliError> {
    if !(a.fence_k >= 0.0) {
        return Err(CliError::Usage(format!("--fence-k must be non-negative, got {}", a.fence_k)));
    }
    if a.pairs == 0 {
        return Err(CliError::Usage("--pairs must be at least 1".into()));
    }
    let source = open_source(cli.source)?;
    let config = CalibrationConfig {
        pairs_per_cost: a.pairs,
        outlier_policy: IqrFence { k: a.fence_k },
        serialized_reads: !a.plain_reads || a.serialized_reads,
    };
    let kinds: Vec<SampleKind> = match a.kind {
        KindArg::Anon => vec![SampleKind::Anon],
        KindArg::Prim => vec![SampleKind::Prim],
        KindArg::Supp => vec![SampleKind::Supp],
        KindArg::All => SampleKind::ALL.to_vec(),
    };
    if cli.verbose {
        eprintln!("calibrating {} pairs per cost on {}", a.pairs, source.descriptor().platform_label);
    }
    let model = calibrate(source, &config, &kinds)?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    model.write(&a.out)?;
    Ok(())
}

fn load_profile(a: &AnalyzeArgs) -> Result<(ApplicationProfile, Vec<String>), CliError> {
    let set = load_trace_dir(&a.traces, a.locations.as_deref())?;
    if set.files.is_empty() {
        return Err(CliError::Malformed(format!("{}: no trace files", a.traces.display())));
    }
    Ok((ApplicationProfile::from_trace_files(&set.files)?, set.locations))
}

fn run_analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<(), CliError> {
    let (profile, names) = load_profile(a)?;
    let source = profile.source().cloned().expect("profile from files has a source");
    let model = match &a.costs {
        Some(path) => CostModel::read(path)?,
        None => {
            eprintln!("warning: no cost model given; spans are not compensated");
            CostModel::zero(source.clone())
        }
    };
    model.check_source(&source)?;
    let baseline_cycles = match &a.baseline {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let summary: BenchSummary = serde_json::from_str(&text)
                .map_err(|e| CliError::Malformed(format!("{}: {e}", path.display())))?;
            if !summary.source.compatible_with(&source) {
                return Err(CalibrationError::MixedSource { model: summary.source.kind, traces: source.kind }.into());
            }
            Some(summary.mean_baseline_cycles)
        }
        None => None,
    };
    let options = ReportOptions { include_spans: a.per_span, pool_size: a.pool_size, baseline_cycles };
    let report = build_report(&profile, &model.constants(), &names, &options)
        .map_err(|e| CliError::Malformed(e.to_string()))?;
    if report.totals.under_compensated_spans > 0 && cli.verbose {
        eprintln!("note: {} spans clamped to zero cycles", report.totals.under_compensated_spans);
    }
    let json = report.to_json();
    match &a.out {
        Some(path) => write_file(path, &json),
        None => io::stdout().write_all(json.as_bytes()).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn run_report(a: &ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let mut report = Report::from_json(&text).map_err(|e| CliError::Malformed(format!("{}: {e}", a.input.display())))?;
    if let (Some(n), Some(lb)) = (a.pool_size, report.load_balance.take()) {
        report.load_balance = Some(lb.with_pool_size(n));
    }
    if let Some(path) = &a.heatmap {
        write_file(path, &report.heatmap.to_csv())?;
    }
    if let Some(path) = &a.svg {
        write_file(path, &report.heatmap.to_svg())?;
    }
    io::stdout().write_all(report.summary(a.hot_locations).as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

fn bench_spec(a: &BenchArgs, workers: usize) -> WorkloadSpec {
    let nesting = match (a.depth, a.fanout) {
        (Some(depth), _) => NestingProfile::DeepRecursive { depth },
        (None, Some(fanout)) => NestingProfile::FlatMapStyle { fanout },
        (None, None) => NestingProfile::Flat,
    };
    WorkloadSpec {
        name: a.workload.clone(),
        mode: match a.mode {
            ModeArg::Seq => WorkloadMode::Sequential,
            ModeArg::Par => WorkloadMode::Parallel,
            ModeArg::Mixed => WorkloadMode::Mixed,
        },
        target_cps: a.cps,
        span_count: a.spans,
        nesting,
        skew: a.skew,
        jitter: a.jitter,
        workers,
        seed: a.seed,
    }
}

fn run_bench(cli: &Cli, a: &BenchArgs) -> Result<(), CliError> {
    let workers = a.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let spec = bench_spec(a, workers);
    spec.validate()?;
    if a.iterations == 0 {
        return Err(CliError::Usage("--iterations must be at least 1".into()));
    }
    let harness = Harness::from_selection(cli.source, workers)?;
    let descriptor = harness.source().descriptor().clone();
    let model = match &a.costs {
        Some(path) => {
            let m = CostModel::read(path)?;
            m.check_source(&descriptor)?;
            Some(m)
        }
        None => None,
    };
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;

    let plain = harness.run_workload(&spec, &RunOptions { profiled: false, warmup: a.warmup, iterations: a.iterations, trace_dir: None })?;
    let mut summary = BenchSummary {
        spec: spec.clone(),
        source: descriptor,
        warmup: a.warmup,
        iterations: a.iterations,
        mean_baseline_cycles: stats::mean(&plain.baseline_cycles).unwrap_or(0.0),
        baseline_cv: stats::coefficient_of_variation(&plain.baseline_cycles).unwrap_or(0.0),
        plain_seconds: plain.iteration_seconds,
        baseline_cycles: plain.baseline_cycles,
        profiled_seconds: Vec::new(),
        trace_dirs: Vec::new(),
        accuracy: None,
        overhead: None,
    };
    if a.profile {
        let opts = RunOptions {
            profiled: true,
            warmup: a.warmup,
            iterations: a.iterations,
            trace_dir: Some(a.out.join(TRACES_DIR)),
        };
        let run = harness.run_workload(&spec, &opts)?;
        summary.profiled_seconds = run.iteration_seconds;
        summary.trace_dirs = run.trace_dirs;
    }
    if a.accuracy {
        let costs = match &model {
            Some(m) => m.constants(),
            None => {
                eprintln!("warning: accuracy without a cost model; spans are not compensated");
                Default::default()
            }
        };
        summary.accuracy = Some(harness.run_accuracy_experiment(&spec, a.runs, a.warmup, &costs)?);
    }
    if let Some(pairs) = a.overhead_pairs {
        summary.overhead = Some(harness.run_overhead_experiment(&spec, pairs, a.warmup)?);
    }
    if cli.verbose {
        eprintln!("baseline {:.0} cycles (CV {:.3})", summary.mean_baseline_cycles, summary.baseline_cv);
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_file(&a.out.join(BENCH_SUMMARY_FILE), &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_usage_codes() {
        assert_eq!(main_with_args(["spanprof", "--help"]), 0);
        assert_eq!(main_with_args(["spanprof", "analyze"]), 1);
        assert_eq!(main_with_args(["spanprof", "bench", "--out", "/x", "--depth", "3", "--fanout", "2"]), 1);
    }

    #[test]
    fn report_defaults() {
        let cli = Cli::try_parse_from(["spanprof", "report", "--in", "r.json"]).unwrap();
        match cli.command {
            Command::Report(r) => assert_eq!(r.hot_locations, 10),
            _ => unreachable!(),
        }
    }
}
