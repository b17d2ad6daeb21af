//! Reports over a reconstructed profile: hot locations, nesting heatmaps,
//! per-worker load balance and accuracy/overhead evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::reconstruct::{ApplicationProfile, CostConstants};
use crate::recorder::MethodId;
use crate::stats;

mod heatmap;
mod report;

pub use heatmap::{build_heatmap, decade_bucket, HeatmapMatrix, DECADE_BUCKETS, NESTING_GROUP_WIDTH};
pub use report::{build_report, Report, ReportOptions, SpanRecord, StreamAggregate, REPORT_FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("profile contains no named spans")]
    NoParallelWork,
    #[error("baseline total is zero")]
    ZeroBaseline,
    #[error("unprofiled time is zero")]
    ZeroDenominator,
    #[error("correlation undefined: {0}")]
    DegenerateVariance(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationAggregate {
    pub method_id: MethodId,
    pub qualified_name: String,
    pub span_count: u64,
    pub total_compensated_cycles: f64,
    pub share_of_total_spans: f64,
    /// Zero for every location when the profile has no compensated cycles.
    pub share_of_total_cycles: f64,
}

fn location_name(names: &[String], id: MethodId) -> String {
    names.get(id.0 as usize).cloned().unwrap_or_else(|| format!("<unknown #{}>", id.0))
}

/// Aggregates every location with complete spans, ranked hottest first.
pub fn location_aggregates(profile: &ApplicationProfile, costs: &CostConstants, names: &[String]) -> Vec<LocationAggregate> {
    let mut per_location: BTreeMap<MethodId, (u64, f64)> = BTreeMap::new();
    let mut total_spans = 0u64;
    let mut total_cycles = 0.0;
    for (_, span) in profile.spans() {
        let c = span.compensated_cycles(costs).cycles;
        let entry = per_location.entry(span.method_id).or_default();
        entry.0 += 1;
        entry.1 += c;
        total_spans += 1;
        total_cycles += c;
    }
    let mut out: Vec<LocationAggregate> = per_location
        .into_iter()
        .map(|(method_id, (span_count, cycles))| LocationAggregate {
            method_id,
            qualified_name: location_name(names, method_id),
            span_count,
            total_compensated_cycles: cycles,
            share_of_total_spans: span_count as f64 / total_spans as f64,
            share_of_total_cycles: if total_cycles > 0.0 { cycles / total_cycles } else { 0.0 },
        })
        .collect();
    out.sort_by(|a, b| {
        b.total_compensated_cycles
            .total_cmp(&a.total_compensated_cycles)
            .then(b.span_count.cmp(&a.span_count))
            .then(a.method_id.cmp(&b.method_id))
    });
    out
}

/// The `k` hottest locations.
pub fn hot_locations(profile: &ApplicationProfile, costs: &CostConstants, names: &[String], k: usize) -> Vec<LocationAggregate> {
    let mut all = location_aggregates(profile, costs, names);
    all.truncate(k);
    all
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadBalanceReport {
    /// Compensated cycles of named spans per executing thread.
    pub per_worker_cycles: BTreeMap<u64, f64>,
    /// Idle workers added on top of the observed ones.
    pub padded_workers: usize,
    pub cv: f64,
    pub task_count: u64,
}

impl LoadBalanceReport {
    /// Recomputes the CV as if the pool had `pool_size` workers, the missing ones idle.
    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.padded_workers = pool_size.saturating_sub(self.per_worker_cycles.len());
        self.cv = worker_cv(self.per_worker_cycles.values().copied(), self.padded_workers);
        self
    }

    pub fn worker_count(&self) -> usize {
        self.per_worker_cycles.len() + self.padded_workers
    }
}

/// Sample CV of per-worker cycles with `idle` extra zero entries.
pub fn worker_cv(cycles: impl IntoIterator<Item = f64>, idle: usize) -> f64 {
    let mut values: Vec<f64> = cycles.into_iter().collect();
    values.extend(std::iter::repeat_n(0.0, idle));
    stats::coefficient_of_variation(&values).unwrap_or(0.0)
}

pub fn load_balance(profile: &ApplicationProfile, costs: &CostConstants) -> Result<LoadBalanceReport, AnalysisError> {
    let mut per_worker: BTreeMap<u64, f64> = BTreeMap::new();
    let mut task_count = 0;
    for (_, span) in profile.spans().filter(|(_, s)| !s.is_anonymous()) {
        *per_worker.entry(span.thread_id).or_default() += span.compensated_cycles(costs).cycles;
        task_count += 1;
    }
    if task_count == 0 {
        return Err(AnalysisError::NoParallelWork);
    }
    let cv = worker_cv(per_worker.values().copied(), 0);
    Ok(LoadBalanceReport { per_worker_cycles: per_worker, padded_workers: 0, cv, task_count })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub baseline_cycles: f64,
    pub compensated_cycles: f64,
    pub accuracy: f64,
    pub cps: f64,
    pub overhead_factor: Option<f64>,
}

/// `1 - |profile - baseline| / baseline`.
pub fn evaluate_accuracy(profile_total: f64, baseline_total: f64) -> Result<f64, AnalysisError> {
    if baseline_total == 0.0 {
        return Err(AnalysisError::ZeroBaseline);
    }
    Ok(1.0 - (profile_total - baseline_total).abs() / baseline_total)
}

/// Slowdown factor `profiled / plain`.
pub fn evaluate_overhead(time_profiled: f64, time_plain: f64) -> Result<f64, AnalysisError> {
    if time_plain == 0.0 {
        return Err(AnalysisError::ZeroDenominator);
    }
    Ok(time_profiled / time_plain)
}

/// Pearson coefficient of two series of at least three points.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::DegenerateVariance("series differ in length"));
    }
    if xs.len() < 3 {
        return Err(AnalysisError::DegenerateVariance("fewer than three points"));
    }
    stats::pearson(xs, ys).ok_or(AnalysisError::DegenerateVariance("a series has zero variance"))
}
