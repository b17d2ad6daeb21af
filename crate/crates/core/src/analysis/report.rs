use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    build_heatmap, evaluate_accuracy, load_balance, location_aggregates, location_name, AnalysisError, EvaluationRecord,
    HeatmapMatrix, LoadBalanceReport, LocationAggregate,
};
use crate::cycles::CycleSourceDescriptor;
use crate::reconstruct::{ApplicationProfile, CostConstants, ProfileTotals};
use crate::recorder::{MethodId, StreamId};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Emit one record per complete span.
    pub include_spans: bool,
    /// Treat the pool as this large when computing the load-balance CV.
    pub pool_size: Option<usize>,
    /// Uninstrumented total to evaluate accuracy against.
    pub baseline_cycles: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamAggregate {
    pub stream_id: StreamId,
    pub location: String,
    pub span_count: u64,
    pub threads: Vec<u64>,
    pub compensated_cycles: f64,
    /// Location of the span the stream was executed from, if any.
    pub outer_location: Option<String>,
    pub nesting_level: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub id: usize,
    pub thread_id: u64,
    pub kind: String,
    pub location: String,
    pub stream_id: StreamId,
    pub cycles_begin: u64,
    pub cycles_end: u64,
    pub measured_cycles: u64,
    pub nested_cycles: u64,
    pub nested_anonymous_spans: u64,
    pub nested_primordial_spans: u64,
    pub nested_support_spans: u64,
    pub compensated_cycles: f64,
    pub under_compensated: bool,
    pub nesting_level: i32,
    pub outer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub source: Option<CycleSourceDescriptor>,
    pub cycle_unit: String,
    pub cost_constants: CostConstants,
    pub totals: ProfileTotals,
    pub cps: f64,
    pub threads: Vec<u64>,
    pub locations: Vec<LocationAggregate>,
    pub streams: Vec<StreamAggregate>,
    pub load_balance: Option<LoadBalanceReport>,
    pub heatmap: HeatmapMatrix,
    pub evaluation: Option<EvaluationRecord>,
    pub spans: Option<Vec<SpanRecord>>,
}

pub fn build_report(
    profile: &ApplicationProfile,
    costs: &CostConstants,
    names: &[String],
    options: &ReportOptions,
) -> Result<Report, AnalysisError> {
    let totals = profile.totals(costs);
    let mut streams = Vec::new();
    for (&stream_id, ids) in profile.merged_named_spans() {
        let complete: Vec<_> = ids.iter().map(|&id| profile.span(id)).filter(|s| s.is_complete()).collect();
        let primordial = ids.iter().copied().find(|&id| profile.span(id).is_primordial);
        let location = primordial.map_or(MethodId(u32::MAX), |p| profile.span(p).method_id);
        let outer = primordial.and_then(|p| profile.outer_span(p));
        streams.push(StreamAggregate {
            stream_id,
            location: location_name(names, location),
            span_count: complete.len() as u64,
            threads: complete.iter().map(|s| s.thread_id).collect::<BTreeSet<_>>().into_iter().collect(),
            compensated_cycles: complete.iter().map(|s| s.compensated_cycles(costs).cycles).sum(),
            outer_location: outer.map(|o| location_name(names, profile.span(o).method_id)),
            nesting_level: primordial.map_or(-1, |p| profile.span(p).nesting_level),
        });
    }
    let load_balance = match load_balance(profile, costs) {
        Ok(lb) => Some(match options.pool_size {
            Some(n) => lb.with_pool_size(n),
            None => lb,
        }),
        Err(AnalysisError::NoParallelWork) => None,
        Err(e) => return Err(e),
    };
    let evaluation = match options.baseline_cycles {
        Some(baseline) => Some(EvaluationRecord {
            baseline_cycles: baseline,
            compensated_cycles: totals.compensated_cycles,
            accuracy: evaluate_accuracy(totals.compensated_cycles, baseline)?,
            cps: totals.cps(),
            overhead_factor: None,
        }),
        None => None,
    };
    let spans = options.include_spans.then(|| {
        profile
            .spans()
            .map(|(id, s)| {
                let c = s.compensated_cycles(costs);
                SpanRecord {
                    id: id.0,
                    thread_id: s.thread_id,
                    kind: s.kind_label().to_string(),
                    location: location_name(names, s.method_id),
                    stream_id: s.stream_id,
                    cycles_begin: s.cycles_begin,
                    cycles_end: s.cycles_end.unwrap_or(s.cycles_begin),
                    measured_cycles: s.measured_cycles(),
                    nested_cycles: s.nested_cycles,
                    nested_anonymous_spans: s.nested_anonymous_spans,
                    nested_primordial_spans: s.nested_primordial_spans,
                    nested_support_spans: s.nested_support_spans,
                    compensated_cycles: c.cycles,
                    under_compensated: c.under_compensated,
                    nesting_level: s.nesting_level,
                    outer: profile.outer_span(id).map(|o| o.0),
                }
            })
            .collect()
    });
    Ok(Report {
        format_version: REPORT_FORMAT_VERSION,
        source: profile.source().cloned(),
        cycle_unit: profile.source().map_or("unknown", |s| s.kind.unit_label()).to_string(),
        cost_constants: *costs,
        totals,
        cps: totals.cps(),
        threads: profile.threads().iter().map(|t| t.thread_id).collect(),
        locations: location_aggregates(profile, costs, names),
        streams,
        load_balance,
        heatmap: build_heatmap(profile, costs),
        evaluation,
        spans,
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Human-readable summary with the `k` hottest locations.
    pub fn summary(&self, k: usize) -> String {
        let mut out = String::new();
        let t = &self.totals;
        writeln!(out, "cycles: {}", self.cycle_unit).unwrap();
        writeln!(
            out,
            "spans: {} complete, {} incomplete, {} clamped to zero",
            t.complete_spans, t.incomplete_spans, t.under_compensated_spans
        )
        .unwrap();
        writeln!(out, "compensated cycles: {:.0} (measured {}), CPS {:.2}", t.compensated_cycles, t.measured_cycles, self.cps).unwrap();
        writeln!(out, "hot locations:").unwrap();
        for (rank, l) in self.locations.iter().take(k).enumerate() {
            writeln!(
                out,
                "  {:>2}. {}  spans {} ({:.2}%)  cycles {:.0} ({:.2}%)",
                rank + 1,
                l.qualified_name,
                l.span_count,
                100.0 * l.share_of_total_spans,
                l.total_compensated_cycles,
                100.0 * l.share_of_total_cycles
            )
            .unwrap();
        }
        if let Some(lb) = &self.load_balance {
            writeln!(out, "load balance: CV {:.2} over {} workers, {} tasks", lb.cv, lb.worker_count(), lb.task_count).unwrap();
        }
        if let Some(e) = &self.evaluation {
            writeln!(out, "accuracy: {:.4} against baseline {:.0}", e.accuracy, e.baseline_cycles).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recorder::{SpanEvent, ThreadTrace};

    #[test]
    fn report_round_trips() {
        let t0 = ThreadTrace {
            thread_id: 0,
            thread_name: "main".into(),
            events: vec![
                SpanEvent::anonymous_begin(0, MethodId(0)),
                SpanEvent::primordial_begin(10, 0, MethodId(1)),
                SpanEvent::end(60),
                SpanEvent::end(100),
            ],
        };
        let t1 = ThreadTrace {
            thread_id: 1,
            thread_name: "worker".into(),
            events: vec![SpanEvent::support_begin(20, 0, MethodId(1)), SpanEvent::end(50)],
        };
        let p = ApplicationProfile::from_traces(&[t0, t1]).unwrap();
        let names = vec!["app::main".to_string(), "app::par".to_string()];
        let opts = ReportOptions { include_spans: true, pool_size: None, baseline_cycles: Some(130.0) };
        let r = build_report(&p, &CostConstants::ZERO, &names, &opts).unwrap();
        assert_eq!(r.streams.len(), 1);
        assert_eq!(r.streams[0].threads, vec![0, 1]);
        assert_eq!(r.streams[0].outer_location.as_deref(), Some("app::main"));
        assert_eq!(r.spans.as_ref().unwrap().len(), 3);
        assert_eq!(r.evaluation.as_ref().unwrap().accuracy, 1.0);
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
        assert!(r.summary(3).contains("app::par"));
    }
}
