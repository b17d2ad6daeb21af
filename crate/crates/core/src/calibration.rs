//! Estimation of the instrumentation cost constants.
//!
//! The span generator emits pairs of spans, one nested in the other, through the
//! same probe code used in production. Nothing runs inside the nested span, so
//! its measured cycles are pure inner cost (IC). Inside the outer span only the
//! nested span's instrumentation runs (plus stream-id generation for primordial
//! pairs, or stream-id lookup for support pairs), so the part of the outer span
//! not covered by the nested one, minus the outer span's own inner cost, is the
//! outer cost of the nested span's kind:
//!
//! ```text
//! outer_cost = (nested_begin - outer_begin) + (outer_end - nested_end) - IC
//! ```
//!
//! Every estimate is the mean after Tukey IQR fencing.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cycles::{CycleSource, CycleSourceDescriptor, CycleSourceKind};
use crate::probe::{PipelineHandle, Profiler};
use crate::reconstruct::CostConstants;
use crate::recorder::{EventKind, RecorderConfig, SpanEvent};
use crate::stats::{self, IqrFence};

pub const COST_MODEL_FORMAT_VERSION: u32 = 1;
pub const FULL_PAIRS_PER_COST: usize = 10_000_000;
pub const MIN_ACCEPTED_PAIRS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Anon,
    Prim,
    Supp,
}

impl SampleKind {
    pub const ALL: [SampleKind; 3] = [SampleKind::Anon, SampleKind::Prim, SampleKind::Supp];
}

impl std::str::FromStr for SampleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anon" => Ok(SampleKind::Anon),
            "prim" => Ok(SampleKind::Prim),
            "supp" => Ok(SampleKind::Supp),
            _ => Err(format!("unknown span kind `{s}` (expected anon, prim, supp)")),
        }
    }
}

/// One generated pair: the outer span strictly contains the nested one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationSample {
    pub outer_begin: u64,
    pub outer_end: u64,
    pub nested_begin: u64,
    pub nested_end: u64,
    pub kind: SampleKind,
}

impl CalibrationSample {
    pub fn inner_cycles(&self) -> u64 {
        self.nested_end - self.nested_begin
    }

    /// Outer-span cycles not covered by the nested span.
    pub fn bracket_cycles(&self) -> u64 {
        (self.nested_begin - self.outer_begin) + (self.outer_end - self.nested_end)
    }

    pub fn is_well_formed(&self) -> bool {
        self.outer_begin < self.nested_begin && self.nested_begin < self.nested_end && self.nested_end < self.outer_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub pairs_per_cost: usize,
    pub outlier_policy: IqrFence,
    pub serialized_reads: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { pairs_per_cost: FULL_PAIRS_PER_COST, outlier_policy: IqrFence::default(), serialized_reads: true }
    }
}

impl CalibrationConfig {
    pub fn with_pairs(mut self, pairs: usize) -> Self {
        self.pairs_per_cost = pairs;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("only {kept} of {total} {what} samples survived outlier removal")]
    DegenerateSamples { what: &'static str, kept: usize, total: usize },
    #[error("no samples to estimate {0}")]
    NoSamples(&'static str),
    #[error("cost model {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cost model {path}: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("cost model was calibrated with {model} but the traces were recorded with {traces}")]
    MixedSource { model: CycleSourceKind, traces: CycleSourceKind },
}

/// Pairs generated between drains of the recorder.
const BATCH: usize = 8192;

/// Runs the span generator for one kind on the calling thread.
pub fn generate_span_pairs(kind: SampleKind, config: &CalibrationConfig, source: Arc<dyn CycleSource>) -> Vec<CalibrationSample> {
    let rec_config = RecorderConfig::memory()
        .with_capacity(4 * BATCH)
        .with_serialized_reads(config.serialized_reads);
    let profiler = Profiler::new(source, rec_config);
    generate_span_pairs_with(&profiler, kind, config.pairs_per_cost)
}

/// Span generator over an existing profiler. Its recorder must have a memory sink
/// with room for at least `4 * 8192` events per thread.
pub fn generate_span_pairs_with(profiler: &Profiler, kind: SampleKind, pairs: usize) -> Vec<CalibrationSample> {
    let outer_loc = profiler.resolve_location("spanprof::calibration::outer");
    let nested_loc = profiler.resolve_location("spanprof::calibration::nested");

    let support_handle = PipelineHandle::parallel();
    if kind == SampleKind::Supp {
        // Support spans only look up an id that already exists.
        drop(profiler.enter_task_execution(&support_handle, nested_loc));
        profiler.recorder().drain_current_thread(&mut Vec::new());
    }

    let mut samples = Vec::with_capacity(pairs);
    let mut events = Vec::with_capacity(4 * BATCH);
    let mut fresh_handles: Vec<PipelineHandle> = Vec::new();
    let mut remaining = pairs;
    while remaining > 0 {
        let n = remaining.min(BATCH);
        if kind == SampleKind::Prim {
            fresh_handles.clear();
            fresh_handles.extend((0..n).map(|_| PipelineHandle::parallel()));
        }
        for i in 0..n {
            let _outer = profiler.enter_sequential_execution(outer_loc);
            match kind {
                SampleKind::Anon => drop(profiler.enter_sequential_execution(nested_loc)),
                SampleKind::Prim => drop(profiler.enter_task_execution(&fresh_handles[i], nested_loc)),
                SampleKind::Supp => drop(profiler.enter_task_execution(&support_handle, nested_loc)),
            }
        }
        events.clear();
        profiler.recorder().drain_current_thread(&mut events);
        samples.extend(events.chunks_exact(4).map(|quad| pair_from_events(quad, kind)));
        remaining -= n;
    }
    samples
}

fn pair_from_events(quad: &[SpanEvent], kind: SampleKind) -> CalibrationSample {
    let expected_begin = match kind {
        SampleKind::Anon => EventKind::Asb,
        SampleKind::Prim => EventKind::Psb,
        SampleKind::Supp => EventKind::Ssb,
    };
    debug_assert_eq!(
        [quad[0].kind, quad[1].kind, quad[2].kind, quad[3].kind],
        [EventKind::Asb, expected_begin, EventKind::Se, EventKind::Se]
    );
    CalibrationSample {
        outer_begin: quad[0].cycles,
        nested_begin: quad[1].cycles,
        nested_end: quad[2].cycles,
        outer_end: quad[3].cycles,
        kind,
    }
}

/// One estimated constant with its dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// Fenced mean, clamped at zero.
    pub mean_cycles: f64,
    /// Coefficient of variation of the kept samples; absent when undefined.
    pub cv: Option<f64>,
    pub samples_kept: usize,
    pub samples_total: usize,
    /// Fenced mean before clamping.
    pub raw_mean_cycles: f64,
}

impl CostEstimate {
    pub fn not_measured() -> Self {
        CostEstimate { mean_cycles: 0.0, cv: None, samples_kept: 0, samples_total: 0, raw_mean_cycles: 0.0 }
    }

    pub fn exact(cycles: f64) -> Self {
        CostEstimate { mean_cycles: cycles, cv: Some(0.0), samples_kept: 0, samples_total: 0, raw_mean_cycles: cycles }
    }

    fn from_values(what: &'static str, values: &[f64], fence: &IqrFence) -> Result<Self, CalibrationError> {
        if values.is_empty() {
            return Err(CalibrationError::NoSamples(what));
        }
        let kept = fence.filter(values);
        if kept.len() * 2 < values.len() {
            return Err(CalibrationError::DegenerateSamples { what, kept: kept.len(), total: values.len() });
        }
        let raw = stats::mean(&kept).unwrap();
        let cv = if raw > 0.0 { stats::coefficient_of_variation(&kept) } else { None };
        Ok(CostEstimate { mean_cycles: raw.max(0.0), cv, samples_kept: kept.len(), samples_total: values.len(), raw_mean_cycles: raw })
    }
}

/// IC: fenced mean of the nested spans' measured cycles.
pub fn estimate_inner_cost(samples: &[CalibrationSample], fence: &IqrFence) -> Result<CostEstimate, CalibrationError> {
    let values: Vec<f64> = samples.iter().map(|s| s.inner_cycles() as f64).collect();
    CostEstimate::from_values("inner cost", &values, fence)
}

/// Per-sample outer cost given the inner cost.
pub fn outer_cost(sample: &CalibrationSample, ic: f64) -> f64 {
    sample.bracket_cycles() as f64 - ic
}

/// Fenced mean outer cost; negative means are clamped to zero in `mean_cycles`.
pub fn estimate_outer_cost(samples: &[CalibrationSample], ic: f64, fence: &IqrFence) -> Result<CostEstimate, CalibrationError> {
    let values: Vec<f64> = samples.iter().map(|s| outer_cost(s, ic)).collect();
    CostEstimate::from_values("outer cost", &values, fence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSet {
    pub ic: CostEstimate,
    pub oc_anon: CostEstimate,
    pub oc_prim: CostEstimate,
    pub oc_supp: CostEstimate,
}

/// Calibrated constants for one platform and cycle source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub format_version: u32,
    pub source: CycleSourceDescriptor,
    pub pairs_per_cost: usize,
    pub costs: CostSet,
    pub outlier_policy: String,
    pub serialized_reads: bool,
    pub support_mode: String,
    /// Expected ordering OC_PRIM >= OC_SUPP >= OC_ANON held (None when not all kinds were run).
    pub direction_check: Option<bool>,
    pub accepted: bool,
    pub warnings: Vec<String>,
}

impl CostModel {
    /// A model that compensates nothing.
    pub fn zero(source: CycleSourceDescriptor) -> Self {
        Self::from_constants(source, CostConstants::ZERO)
    }

    /// A model with fixed, externally supplied constants.
    pub fn from_constants(source: CycleSourceDescriptor, c: CostConstants) -> Self {
        CostModel {
            format_version: COST_MODEL_FORMAT_VERSION,
            source,
            pairs_per_cost: 0,
            costs: CostSet {
                ic: CostEstimate::exact(c.ic),
                oc_anon: CostEstimate::exact(c.oc_anon),
                oc_prim: CostEstimate::exact(c.oc_prim),
                oc_supp: CostEstimate::exact(c.oc_supp),
            },
            outlier_policy: "none".into(),
            serialized_reads: false,
            support_mode: "none".into(),
            direction_check: None,
            accepted: true,
            warnings: Vec::new(),
        }
    }

    pub fn constants(&self) -> CostConstants {
        CostConstants {
            ic: self.costs.ic.mean_cycles,
            oc_anon: self.costs.oc_anon.mean_cycles,
            oc_prim: self.costs.oc_prim.mean_cycles,
            oc_supp: self.costs.oc_supp.mean_cycles,
        }
    }

    /// Fails unless traces from `traces` may be compensated with this model.
    pub fn check_source(&self, traces: &CycleSourceDescriptor) -> Result<(), CalibrationError> {
        if self.source.compatible_with(traces) {
            Ok(())
        } else {
            Err(CalibrationError::MixedSource { model: self.source.kind, traces: traces.kind })
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost model serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), CalibrationError> {
        fs::write(path, self.to_json() + "\n")
            .map_err(|source| CalibrationError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self, CalibrationError> {
        let text = fs::read_to_string(path)
            .map_err(|source| CalibrationError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| CalibrationError::Format { path: path.display().to_string(), source })
    }
}

/// Assembles the persisted model from the four estimates.
pub fn write_cost_model(
    ic: CostEstimate,
    oc_anon: CostEstimate,
    oc_prim: CostEstimate,
    oc_supp: CostEstimate,
    source: CycleSourceDescriptor,
    config: &CalibrationConfig,
    kinds_run: &[SampleKind],
) -> CostModel {
    let mut warnings = Vec::new();
    if config.pairs_per_cost < MIN_ACCEPTED_PAIRS {
        warnings.push(format!(
            "only {} pairs per cost; at least {MIN_ACCEPTED_PAIRS} are needed for an accepted model",
            config.pairs_per_cost
        ));
    } else if config.pairs_per_cost < FULL_PAIRS_PER_COST {
        warnings.push(format!("desk-scale calibration: {} pairs per cost (full setting is {FULL_PAIRS_PER_COST})", config.pairs_per_cost));
    }
    for (kind, est) in [(SampleKind::Anon, &oc_anon), (SampleKind::Prim, &oc_prim), (SampleKind::Supp, &oc_supp)] {
        if !kinds_run.contains(&kind) {
            warnings.push(format!("{kind:?} outer cost not measured; stored as 0"));
        } else if est.raw_mean_cycles < 0.0 {
            warnings.push(format!("{kind:?} outer cost mean was negative ({:.2}); clamped to 0", est.raw_mean_cycles));
        }
    }
    let direction_check = (kinds_run.len() == 3).then(|| {
        oc_prim.raw_mean_cycles >= oc_supp.raw_mean_cycles && oc_supp.raw_mean_cycles >= oc_anon.raw_mean_cycles
    });
    if direction_check == Some(false) {
        warnings.push(format!(
            "expected OC_PRIM >= OC_SUPP >= OC_ANON, got {:.2} / {:.2} / {:.2}",
            oc_prim.raw_mean_cycles, oc_supp.raw_mean_cycles, oc_anon.raw_mean_cycles
        ));
    }
    CostModel {
        format_version: COST_MODEL_FORMAT_VERSION,
        source,
        pairs_per_cost: config.pairs_per_cost,
        costs: CostSet { ic, oc_anon, oc_prim, oc_supp },
        outlier_policy: format!("tukey-iqr(k={})", config.outlier_policy.k),
        serialized_reads: config.serialized_reads,
        support_mode: "single-thread, stream id pre-set".into(),
        direction_check,
        accepted: config.pairs_per_cost >= MIN_ACCEPTED_PAIRS,
        warnings,
    }
}

/// Full calibration session: IC from all generated kinds pooled, then one outer
/// cost per kind.
pub fn calibrate(source: Arc<dyn CycleSource>, config: &CalibrationConfig, kinds: &[SampleKind]) -> Result<CostModel, CalibrationError> {
    let mut by_kind: Vec<(SampleKind, Vec<CalibrationSample>)> = Vec::new();
    for &kind in kinds {
        by_kind.push((kind, generate_span_pairs(kind, config, Arc::clone(&source))));
    }
    let pooled: Vec<CalibrationSample> = by_kind.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    let ic = estimate_inner_cost(&pooled, &config.outlier_policy)?;
    let outer = |kind| -> Result<CostEstimate, CalibrationError> {
        match by_kind.iter().find(|(k, _)| *k == kind) {
            Some((_, samples)) => estimate_outer_cost(samples, ic.mean_cycles, &config.outlier_policy),
            None => Ok(CostEstimate::not_measured()),
        }
    };
    let oc_anon = outer(SampleKind::Anon)?;
    let oc_prim = outer(SampleKind::Prim)?;
    let oc_supp = outer(SampleKind::Supp)?;
    Ok(write_cost_model(ic, oc_anon, oc_prim, oc_supp, source.descriptor().clone(), config, kinds))
}
