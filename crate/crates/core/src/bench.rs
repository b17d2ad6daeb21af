//! Synthetic workloads and the accuracy/overhead experiment runner.
//!
//! A workload is a tree of stream executions that burns a fixed amount of work
//! inside each span. The same tree runs either instrumented (through [`Profiler`])
//! or plain, in which case every participating thread reads the cycle source
//! exactly twice: once before and once after its stream work.

use std::hint::black_box;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{evaluate_accuracy, evaluate_overhead, AnalysisError, EvaluationRecord};
use crate::cycles::{open_source, CycleError, CycleSource, ScriptedSource, SourceSelection};
use crate::probe::{ParallelStream, Profiler};
use crate::reconstruct::{ApplicationProfile, CostConstants, ReconstructError};
use crate::recorder::{MethodId, RecorderConfig, RecorderError, ThreadTrace};
use crate::stats::{self, ConfidenceInterval};

pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_ITERATIONS: usize = 20;
pub const DEFAULT_RUNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    Sequential,
    Parallel,
    /// Sequential streams that each run a parallel stream.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestingProfile {
    Flat,
    /// Every top-level stream is a chain of `depth` streams, each nested in the previous one.
    DeepRecursive { depth: usize },
    /// Every top-level stream runs `fanout` inner streams, one per element.
    FlatMapStyle { fanout: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub mode: WorkloadMode,
    /// Cycles of work inside each span. The harness converts them to loop
    /// iterations at its measured burn rate; on a scripted source they are exact.
    pub target_cps: u64,
    /// Top-level streams (sequential), or tasks of the single parallel stream.
    pub span_count: usize,
    pub nesting: NestingProfile,
    /// Fraction of a parallel stream's work moved onto its first task.
    pub skew: Option<f64>,
    /// Relative random variation of per-span work, in `[0, 1)`.
    pub jitter: f64,
    pub workers: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn sequential(name: &str, span_count: usize, target_cps: u64) -> Self {
        WorkloadSpec {
            name: name.to_string(),
            mode: WorkloadMode::Sequential,
            target_cps,
            span_count,
            nesting: NestingProfile::Flat,
            skew: None,
            jitter: 0.0,
            workers: 1,
            seed: 0,
        }
    }

    pub fn parallel(name: &str, tasks: usize, target_cps: u64, workers: usize) -> Self {
        WorkloadSpec { mode: WorkloadMode::Parallel, workers, ..Self::sequential(name, tasks, target_cps) }
    }

    pub fn with_nesting(mut self, nesting: NestingProfile) -> Self {
        self.nesting = nesting;
        self
    }

    pub fn with_skew(mut self, skew: f64) -> Self {
        self.skew = Some(skew);
        self
    }

    pub fn with_jitter(mut self, jitter: f64, seed: u64) -> Self {
        self.jitter = jitter;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidSpec(m));
        if self.span_count == 0 {
            return bad("span_count must be at least 1".into());
        }
        if let Some(s) = self.skew {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("skew {s} outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 1)", self.jitter));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        match self.nesting {
            NestingProfile::DeepRecursive { depth: 0 } | NestingProfile::FlatMapStyle { fanout: 0 } => {
                bad("nesting depth and fanout must be at least 1".into())
            }
            _ => Ok(()),
        }
    }

    fn fanout(&self) -> usize {
        match self.nesting {
            NestingProfile::FlatMapStyle { fanout } => fanout,
            _ => 4,
        }
    }

    /// Spans one iteration creates.
    pub fn total_spans(&self) -> usize {
        match (self.mode, self.nesting) {
            (WorkloadMode::Sequential, NestingProfile::DeepRecursive { depth }) => self.span_count * depth,
            (WorkloadMode::Sequential, NestingProfile::FlatMapStyle { fanout }) => self.span_count * (1 + fanout),
            (WorkloadMode::Sequential | WorkloadMode::Parallel, _) => self.span_count,
            (WorkloadMode::Mixed, _) => self.span_count * (1 + self.fanout()),
        }
    }

    /// Work cycles of every span, in layout order.
    pub fn span_works(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut works: Vec<u64> = (0..self.total_spans())
            .map(|_| {
                if self.jitter == 0.0 {
                    self.target_cps
                } else {
                    let f = 1.0 + self.jitter * rng.random_range(-1.0..1.0);
                    (self.target_cps as f64 * f).round() as u64
                }
            })
            .collect();
        if let (WorkloadMode::Parallel, Some(s)) = (self.mode, self.skew) {
            let total: u64 = works.iter().sum();
            for w in works.iter_mut() {
                *w = ((1.0 - s) * *w as f64).round() as u64;
            }
            let moved = total - works.iter().sum::<u64>();
            works[0] += moved;
        }
        works
    }

    /// Six sequential workloads spanning CPS 10^2 to 10^6 with similar total work cycles.
    pub fn cps_ladder(total_work: u64) -> Vec<WorkloadSpec> {
        [100u64, 1_000, 10_000, 100_000, 300_000, 1_000_000]
            .iter()
            .map(|&cps| {
                let spans = (total_work / cps).max(1) as usize;
                WorkloadSpec::sequential(&format!("cps-{cps}"), spans, cps)
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Source(#[from] CycleError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub profiled: bool,
    pub warmup: usize,
    pub iterations: usize,
    /// Dump each measured profiled iteration's traces to `dir/iter-NNN`; kept in memory otherwise.
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct WorkloadRun {
    pub iteration_seconds: Vec<f64>,
    /// In-memory traces of each measured profiled iteration.
    pub traces: Vec<Vec<ThreadTrace>>,
    /// Trace directories written, one per measured profiled iteration.
    pub trace_dirs: Vec<PathBuf>,
    /// Summed per-thread two-read deltas of each measured plain iteration.
    pub baseline_cycles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyOutcome {
    pub workload: String,
    pub runs: usize,
    pub record: EvaluationRecord,
    pub baseline_totals: Vec<f64>,
    pub compensated_totals: Vec<f64>,
    pub baseline_cv: f64,
    pub compensated_cv: f64,
    pub spans_per_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadOutcome {
    pub workload: String,
    pub factors: Vec<f64>,
    pub plain_seconds: Vec<f64>,
    pub profiled_seconds: Vec<f64>,
    pub mean_factor: f64,
    pub ci95: Option<ConfidenceInterval>,
}

/// Owns the cycle source and the worker pool the workloads run on.
pub struct Harness {
    source: Arc<dyn CycleSource>,
    scripted: Option<Arc<ScriptedSource>>,
    pool: rayon::ThreadPool,
    workers: usize,
    recorder_capacity: Option<usize>,
    units_per_cycle: f64,
}

impl Harness {
    pub fn new(source: Arc<dyn CycleSource>, workers: usize) -> Self {
        Self::build(source, None, workers)
    }

    /// A harness whose work is simulated on a scripted source.
    pub fn scripted(source: Arc<ScriptedSource>, workers: usize) -> Self {
        let dyn_source: Arc<dyn CycleSource> = source.clone();
        Self::build(dyn_source, Some(source), workers)
    }

    pub fn from_selection(selection: SourceSelection, workers: usize) -> Result<Self, CycleError> {
        Ok(match selection {
            SourceSelection::Scripted { step } => Self::scripted(Arc::new(ScriptedSource::new(step)), workers),
            other => Self::new(open_source(other)?, workers),
        })
    }

    fn build(source: Arc<dyn CycleSource>, scripted: Option<Arc<ScriptedSource>>, workers: usize) -> Self {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("spanprof-worker-{i}"))
            .build()
            .expect("worker pool");
        let units_per_cycle = if scripted.is_some() { 1.0 } else { measure_burn_rate(source.as_ref()) };
        Harness { source, scripted, pool, workers, recorder_capacity: None, units_per_cycle }
    }

    /// Overrides the measured burn rate (loop iterations per cycle).
    pub fn with_units_per_cycle(mut self, rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "burn rate must be positive");
        self.units_per_cycle = rate;
        self
    }

    /// Loop iterations the burn kernel runs per cycle of the source.
    pub fn units_per_cycle(&self) -> f64 {
        self.units_per_cycle
    }

    /// Per-thread buffer capacity of profiled runs.
    pub fn with_recorder_capacity(mut self, capacity: usize) -> Self {
        self.recorder_capacity = Some(capacity);
        self
    }

    pub fn source(&self) -> &Arc<dyn CycleSource> {
        &self.source
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    fn burn(&self, cycles: u64) {
        match &self.scripted {
            Some(s) => s.advance(cycles),
            None => burn_units((cycles as f64 * self.units_per_cycle).round() as u64),
        }
    }

    fn recorder_config(&self, dir: Option<PathBuf>) -> RecorderConfig {
        let mut cfg = match dir {
            Some(d) => RecorderConfig::directory(d),
            None => RecorderConfig::memory(),
        };
        if let Some(c) = self.recorder_capacity {
            cfg = cfg.with_capacity(c);
        }
        cfg
    }

    /// One instrumented iteration; returns elapsed seconds and the profiler holding its events.
    pub fn profiled_iteration(&self, spec: &WorkloadSpec, dir: Option<PathBuf>) -> (f64, Profiler) {
        let profiler = Profiler::new(Arc::clone(&self.source), self.recorder_config(dir));
        let works = spec.span_works();
        let exec = Exec { harness: self, spec, works: &works, profiler: Some(&profiler), locations: Locations::new(&profiler, spec) };
        let start = Instant::now();
        exec.run();
        (start.elapsed().as_secs_f64(), profiler)
    }

    /// One plain iteration; returns elapsed seconds and the summed per-thread cycle deltas.
    pub fn plain_iteration(&self, spec: &WorkloadSpec) -> (f64, f64) {
        let works = spec.span_works();
        let exec = Exec { harness: self, spec, works: &works, profiler: None, locations: Locations::none() };
        let start = Instant::now();
        let total = match spec.mode {
            WorkloadMode::Sequential => {
                let before = self.source.read().get();
                exec.run();
                let after = self.source.read().get();
                (after - before) as f64
            }
            WorkloadMode::Parallel | WorkloadMode::Mixed => {
                let before = self.pool.broadcast(|_| self.source.read().get());
                exec.run();
                let after = self.pool.broadcast(|_| self.source.read().get());
                before.iter().zip(&after).map(|(b, a)| (a - b) as f64).sum()
            }
        };
        (start.elapsed().as_secs_f64(), total)
    }

    /// Warm-up iterations, then `iterations` measured ones.
    pub fn run_workload(&self, spec: &WorkloadSpec, opts: &RunOptions) -> Result<WorkloadRun, BenchError> {
        spec.validate()?;
        let mut run = WorkloadRun::default();
        for _ in 0..opts.warmup {
            if opts.profiled {
                drop(self.profiled_iteration(spec, None));
            } else {
                self.plain_iteration(spec);
            }
        }
        for i in 0..opts.iterations {
            if opts.profiled {
                let dir = opts.trace_dir.as_ref().map(|d| d.join(format!("iter-{i:03}")));
                let (secs, profiler) = self.profiled_iteration(spec, dir.clone());
                run.iteration_seconds.push(secs);
                match dir {
                    Some(d) => {
                        profiler.recorder().flush_all()?;
                        run.trace_dirs.push(d);
                    }
                    None => run.traces.push(profiler.recorder().drain()),
                }
            } else {
                let (secs, cycles) = self.plain_iteration(spec);
                run.iteration_seconds.push(secs);
                run.baseline_cycles.push(cycles);
            }
        }
        Ok(run)
    }

    /// Compares compensated totals with plain-run baselines, averaged over `runs`.
    pub fn run_accuracy_experiment(
        &self,
        spec: &WorkloadSpec,
        runs: usize,
        warmup: usize,
        costs: &CostConstants,
    ) -> Result<AccuracyOutcome, BenchError> {
        spec.validate()?;
        for _ in 0..warmup {
            self.plain_iteration(spec);
            drop(self.profiled_iteration(spec, None));
        }
        let mut baseline_totals = Vec::with_capacity(runs);
        let mut compensated_totals = Vec::with_capacity(runs);
        let mut spans_per_run = 0;
        for _ in 0..runs.max(1) {
            baseline_totals.push(self.plain_iteration(spec).1);
            let (_, profiler) = self.profiled_iteration(spec, None);
            let profile = ApplicationProfile::from_traces(&profiler.recorder().drain())?;
            spans_per_run = profile.span_count();
            compensated_totals.push(profile.total_compensated_cycles(costs));
        }
        let baseline = stats::mean(&baseline_totals).unwrap();
        let compensated = stats::mean(&compensated_totals).unwrap();
        let record = EvaluationRecord {
            baseline_cycles: baseline,
            compensated_cycles: compensated,
            accuracy: evaluate_accuracy(compensated, baseline)?,
            cps: compensated / spans_per_run.max(1) as f64,
            overhead_factor: None,
        };
        Ok(AccuracyOutcome {
            workload: spec.name.clone(),
            runs: baseline_totals.len(),
            record,
            baseline_cv: stats::coefficient_of_variation(&baseline_totals).unwrap_or(0.0),
            compensated_cv: stats::coefficient_of_variation(&compensated_totals).unwrap_or(0.0),
            baseline_totals,
            compensated_totals,
            spans_per_run,
        })
    }

    /// Paired plain/profiled timings; the factor of each pair and a 95% CI of their mean.
    pub fn run_overhead_experiment(&self, spec: &WorkloadSpec, pairs: usize, warmup: usize) -> Result<OverheadOutcome, BenchError> {
        spec.validate()?;
        for _ in 0..warmup {
            self.plain_iteration(spec);
            drop(self.profiled_iteration(spec, None));
        }
        let mut out = OverheadOutcome {
            workload: spec.name.clone(),
            factors: Vec::new(),
            plain_seconds: Vec::new(),
            profiled_seconds: Vec::new(),
            mean_factor: 0.0,
            ci95: None,
        };
        for _ in 0..pairs.max(1) {
            let (plain, _) = self.plain_iteration(spec);
            let (profiled, profiler) = self.profiled_iteration(spec, None);
            drop(profiler.recorder().drain());
            out.factors.push(evaluate_overhead(profiled, plain)?);
            out.plain_seconds.push(plain);
            out.profiled_seconds.push(profiled);
        }
        out.mean_factor = stats::mean(&out.factors).unwrap();
        out.ci95 = stats::confidence_interval(&out.factors, 0.95);
        Ok(out)
    }
}

/// A dependent multiply/rotate chain with fixed latency per unit. The chain
/// continues across calls so consecutive spans cannot overlap.
fn burn_units(units: u64) {
    BURN_STATE.with(|state| {
        let mut x = state.get();
        for i in 0..units {
            x = x.wrapping_mul(0x2545_f491_4f6c_dd1d).rotate_left(7) ^ i;
        }
        state.set(black_box(x));
    });
}

/// Median rate over a few timed bursts on the calling thread.
fn measure_burn_rate(source: &dyn CycleSource) -> f64 {
    const UNITS: u64 = 200_000;
    burn_units(UNITS);
    let rates: Vec<f64> = (0..9)
        .map(|_| {
            let before = source.read().get();
            burn_units(UNITS);
            let after = source.read().get();
            UNITS as f64 / (after - before).max(1) as f64
        })
        .collect();
    stats::median(&rates).unwrap()
}

thread_local! {
    static BURN_STATE: std::cell::Cell<u64> = const { std::cell::Cell::new(0x9e37_79b9_7f4a_7c15) };
}

struct Locations {
    outer: MethodId,
    inner: MethodId,
    parallel: MethodId,
}

impl Locations {
    fn new(profiler: &Profiler, spec: &WorkloadSpec) -> Self {
        Locations {
            outer: profiler.resolve_location(&format!("bench::{}::outer", spec.name)),
            inner: profiler.resolve_location(&format!("bench::{}::inner", spec.name)),
            parallel: profiler.resolve_location(&format!("bench::{}::parallel", spec.name)),
        }
    }

    fn none() -> Self {
        Locations { outer: MethodId(0), inner: MethodId(0), parallel: MethodId(0) }
    }
}

struct Exec<'a> {
    harness: &'a Harness,
    spec: &'a WorkloadSpec,
    works: &'a [u64],
    profiler: Option<&'a Profiler>,
    locations: Locations,
}

impl Exec<'_> {
    fn sequential_span(&self, location: MethodId, body: impl FnOnce()) {
        let _span = self.profiler.map(|p| p.enter_sequential_execution(location));
        body();
    }

    fn run(&self) {
        match self.spec.mode {
            WorkloadMode::Sequential => self.run_sequential(),
            WorkloadMode::Parallel => self.harness.pool.install(|| self.parallel_stream(self.works)),
            WorkloadMode::Mixed => self.harness.pool.install(|| {
                let per = 1 + self.spec.fanout();
                for chunk in self.works.chunks(per) {
                    self.sequential_span(self.locations.outer, || {
                        self.harness.burn(chunk[0]);
                        self.parallel_stream(&chunk[1..]);
                    });
                }
            }),
        }
    }

    fn run_sequential(&self) {
        match self.spec.nesting {
            NestingProfile::Flat => {
                for &w in self.works {
                    self.sequential_span(self.locations.outer, || self.harness.burn(w));
                }
            }
            NestingProfile::DeepRecursive { depth } => {
                for chain in self.works.chunks(depth) {
                    self.chain(chain, self.locations.outer);
                }
            }
            NestingProfile::FlatMapStyle { fanout } => {
                for group in self.works.chunks(1 + fanout) {
                    self.sequential_span(self.locations.outer, || {
                        self.harness.burn(group[0]);
                        for &w in &group[1..] {
                            self.sequential_span(self.locations.inner, || self.harness.burn(w));
                        }
                    });
                }
            }
        }
    }

    fn chain(&self, works: &[u64], location: MethodId) {
        if let Some((&w, rest)) = works.split_first() {
            self.sequential_span(location, || {
                self.harness.burn(w);
                self.chain(rest, self.locations.inner);
            });
        }
    }

    fn parallel_stream(&self, works: &[u64]) {
        if works.is_empty() {
            return;
        }
        match self.profiler {
            Some(p) => ParallelStream::new(works).for_each(p, self.locations.parallel, |&w| self.harness.burn(w)),
            None => plain_split(works, &|&w| self.harness.burn(w)),
        }
    }
}

/// Same fork/join shape as [`ParallelStream`] with grain 1, without spans.
fn plain_split<T: Sync>(items: &[T], f: &(impl Fn(&T) + Sync)) {
    if items.len() <= 1 {
        items.iter().for_each(f);
        return;
    }
    let (left, right) = items.split_at(items.len() / 2);
    rayon::join(|| plain_split(left, f), || plain_split(right, f));
}
