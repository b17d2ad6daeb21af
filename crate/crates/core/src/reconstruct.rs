//! Offline span reconstruction and cost compensation.
//!
//! Each thread trace is replayed against a stack: a begin event pushes a span,
//! an end event pops it, links it to the span below (its same-thread parent) and
//! charges its measured cycles to that parent. Named spans are then merged across
//! threads by stream id; support spans take their outer span from their stream's
//! primordial span, since only the primordial ran inside the code that launched
//! the parallel stream.
//!
//! Compensated cycles of a span:
//!
//! ```text
//! (measured - nested) - n_anon*OC_ANON - n_prim*OC_PRIM - n_supp*OC_SUPP - IC
//! ```
//!
//! where `nested` sums the *measured* cycles of directly nested spans and the
//! `n_*` count those nested spans by kind. Negative results clamp to zero.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::TraceFile;
use crate::cycles::CycleSourceDescriptor;
use crate::recorder::{EventKind, MethodId, SpanEvent, StreamId, ThreadTrace, ANONYMOUS_STREAM};

/// Index of a span inside its owning profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpanId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub cycles_begin: u64,
    /// `None` while the span never saw its end event.
    pub cycles_end: Option<u64>,
    pub stream_id: StreamId,
    pub method_id: MethodId,
    pub thread_id: u64,
    pub is_primordial: bool,
    pub nested_cycles: u64,
    pub nested_anonymous_spans: u64,
    pub nested_primordial_spans: u64,
    pub nested_support_spans: u64,
    /// Enclosing span on the same thread.
    pub parent: Option<SpanId>,
    /// The stream's primordial span; set on support spans only.
    pub primordial: Option<SpanId>,
    /// `-1` until nesting levels are computed.
    pub nesting_level: i32,
}

impl Span {
    fn open(event: &SpanEvent, thread_id: u64) -> Self {
        Span {
            cycles_begin: event.cycles,
            cycles_end: None,
            stream_id: event.stream_id,
            method_id: event.method_id,
            thread_id,
            is_primordial: event.kind == EventKind::Psb,
            nested_cycles: 0,
            nested_anonymous_spans: 0,
            nested_primordial_spans: 0,
            nested_support_spans: 0,
            parent: None,
            primordial: None,
            nesting_level: -1,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cycles_end.is_some()
    }

    pub fn is_anonymous(&self) -> bool {
        self.stream_id == ANONYMOUS_STREAM
    }

    pub fn is_support(&self) -> bool {
        !self.is_anonymous() && !self.is_primordial
    }

    pub fn kind_label(&self) -> &'static str {
        if self.is_anonymous() {
            "anonymous"
        } else if self.is_primordial {
            "primordial"
        } else {
            "support"
        }
    }

    /// `cycles_end - cycles_begin`; zero for incomplete spans.
    pub fn measured_cycles(&self) -> u64 {
        self.cycles_end.map_or(0, |end| end - self.cycles_begin)
    }

    /// Cycles not covered by directly nested spans.
    pub fn exclusive_cycles(&self) -> u64 {
        self.measured_cycles() - self.nested_cycles
    }

    pub fn compensated_cycles(&self, costs: &CostConstants) -> Compensated {
        let raw = self.exclusive_cycles() as f64
            - self.nested_anonymous_spans as f64 * costs.oc_anon
            - self.nested_primordial_spans as f64 * costs.oc_prim
            - self.nested_support_spans as f64 * costs.oc_supp
            - costs.ic;
        Compensated { raw, cycles: raw.max(0.0), under_compensated: raw < 0.0 }
    }
}

/// The four instrumentation cost constants, in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostConstants {
    pub ic: f64,
    pub oc_anon: f64,
    pub oc_prim: f64,
    pub oc_supp: f64,
}

impl CostConstants {
    pub const ZERO: CostConstants = CostConstants { ic: 0.0, oc_anon: 0.0, oc_prim: 0.0, oc_supp: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensated {
    /// Value before clamping; may be negative.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub cycles: f64,
    pub under_compensated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedKind {
    UnbalancedEnd,
    NonMonotonicCycles,
}

impl fmt::Display for MalformedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedKind::UnbalancedEnd => f.write_str("span end without a matching begin"),
            MalformedKind::NonMonotonicCycles => f.write_str("cycle counter went backwards"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReconstructError {
    #[error("malformed trace for thread {thread_id}: {kind} at event {event_index}")]
    MalformedTrace { thread_id: u64, event_index: usize, kind: MalformedKind },
    #[error("stream {stream_id} has {count} primordial spans (expected exactly 1)")]
    DuplicatePrimordial { stream_id: StreamId, count: usize },
    #[error("outer-span chain starting at span {0:?} is cyclic")]
    CyclicNesting(SpanId),
    #[error("cannot mix cycle sources: {expected} vs {found}")]
    MixedSource { expected: String, found: String },
}

/// Spans of one thread. Span ids index `spans`, which is in begin order.
#[derive(Debug, Clone)]
pub struct ThreadProfile {
    pub thread_id: u64,
    pub thread_name: String,
    spans: Vec<Span>,
    completion_order: Vec<SpanId>,
    named_spans: BTreeMap<StreamId, Vec<SpanId>>,
    incomplete: Vec<SpanId>,
}

impl ThreadProfile {
    pub fn span(&self, id: SpanId) -> &Span {
        &self.spans[id.0]
    }

    /// Complete spans in the order they ended.
    pub fn spans(&self) -> impl Iterator<Item = (SpanId, &Span)> + '_ {
        self.completion_order.iter().map(|&id| (id, &self.spans[id.0]))
    }

    pub fn named_spans(&self) -> &BTreeMap<StreamId, Vec<SpanId>> {
        &self.named_spans
    }

    /// Spans whose end event never appeared, outermost first.
    pub fn incomplete(&self) -> &[SpanId] {
        &self.incomplete
    }
}

/// Replays one thread's events into spans.
pub fn reconstruct_thread(events: &[SpanEvent], thread_id: u64, thread_name: &str) -> Result<ThreadProfile, ReconstructError> {
    let mut spans: Vec<Span> = Vec::with_capacity(events.len() / 2 + 1);
    let mut completion_order = Vec::with_capacity(events.len() / 2);
    let mut named_spans: BTreeMap<StreamId, Vec<SpanId>> = BTreeMap::new();
    let mut stack: Vec<SpanId> = Vec::new();
    let mut last_cycles: Option<u64> = None;

    for (index, event) in events.iter().enumerate() {
        let malformed = |kind| ReconstructError::MalformedTrace { thread_id, event_index: index, kind };
        if last_cycles.is_some_and(|prev| event.cycles <= prev) {
            return Err(malformed(MalformedKind::NonMonotonicCycles));
        }
        last_cycles = Some(event.cycles);

        if event.kind.is_begin() {
            stack.push(SpanId(spans.len()));
            spans.push(Span::open(event, thread_id));
            continue;
        }

        let id = stack.pop().ok_or_else(|| malformed(MalformedKind::UnbalancedEnd))?;
        spans[id.0].cycles_end = Some(event.cycles);
        let measured = spans[id.0].measured_cycles();
        if let Some(&parent_id) = stack.last() {
            let (is_anon, is_prim) = (spans[id.0].is_anonymous(), spans[id.0].is_primordial);
            spans[id.0].parent = Some(parent_id);
            let parent = &mut spans[parent_id.0];
            parent.nested_cycles += measured;
            if is_anon {
                parent.nested_anonymous_spans += 1;
            } else if is_prim {
                parent.nested_primordial_spans += 1;
            } else {
                parent.nested_support_spans += 1;
            }
        }
        if !spans[id.0].is_anonymous() {
            named_spans.entry(spans[id.0].stream_id).or_default().push(id);
        }
        completion_order.push(id);
    }

    // Still-open spans: link them so nesting levels can be computed, but keep
    // their cycles out of every parent.
    for w in stack.windows(2) {
        spans[w[1].0].parent = Some(w[0]);
    }
    for &id in &stack {
        if !spans[id.0].is_anonymous() {
            named_spans.entry(spans[id.0].stream_id).or_default().push(id);
        }
    }

    Ok(ThreadProfile {
        thread_id,
        thread_name: thread_name.to_owned(),
        spans,
        completion_order,
        named_spans,
        incomplete: stack,
    })
}

/// Per-thread summary kept on the application profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadInfo {
    pub thread_id: u64,
    pub thread_name: String,
}

/// All spans of a run with cross-thread stream links resolved.
#[derive(Debug, Clone)]
pub struct ApplicationProfile {
    spans: Vec<Span>,
    /// Complete spans: threads in ascending id order, each in completion order.
    all_spans: Vec<SpanId>,
    merged_named_spans: BTreeMap<StreamId, Vec<SpanId>>,
    incomplete: Vec<SpanId>,
    threads: Vec<ThreadInfo>,
    source: Option<CycleSourceDescriptor>,
}

impl ApplicationProfile {
    /// Merges thread profiles, resolves primordial links and nesting levels.
    pub fn build(mut thread_profiles: Vec<ThreadProfile>) -> Result<Self, ReconstructError> {
        thread_profiles.sort_by_key(|tp| tp.thread_id);
        let mut profile = ApplicationProfile {
            spans: Vec::new(),
            all_spans: Vec::new(),
            merged_named_spans: BTreeMap::new(),
            incomplete: Vec::new(),
            threads: Vec::new(),
            source: None,
        };
        for tp in thread_profiles {
            profile.absorb(tp);
        }
        profile.update_primordial()?;
        profile.update_nesting_levels()?;
        Ok(profile)
    }

    pub fn from_traces(traces: &[ThreadTrace]) -> Result<Self, ReconstructError> {
        let profiles = traces
            .iter()
            .map(|t| reconstruct_thread(&t.events, t.thread_id, &t.thread_name))
            .collect::<Result<Vec<_>, _>>()?;
        Self::build(profiles)
    }

    /// Builds from decoded trace files, which must all come from one kind of cycle source.
    pub fn from_trace_files(files: &[TraceFile]) -> Result<Self, ReconstructError> {
        let source = files.first().map(|f| f.descriptor.clone());
        if let Some(first) = &source {
            if let Some(bad) = files.iter().find(|f| !f.descriptor.compatible_with(first)) {
                return Err(ReconstructError::MixedSource {
                    expected: first.kind.to_string(),
                    found: bad.descriptor.kind.to_string(),
                });
            }
        }
        let traces: Vec<ThreadTrace> = files.iter().map(|f| f.trace.clone()).collect();
        let mut profile = Self::from_traces(&traces)?;
        profile.source = source;
        Ok(profile)
    }

    pub fn with_source(mut self, source: CycleSourceDescriptor) -> Self {
        self.source = Some(source);
        self
    }

    pub fn source(&self) -> Option<&CycleSourceDescriptor> {
        self.source.as_ref()
    }

    fn absorb(&mut self, tp: ThreadProfile) {
        let offset = self.spans.len();
        let shift = |id: SpanId| SpanId(id.0 + offset);
        self.spans.extend(tp.spans.into_iter().map(|mut s| {
            s.parent = s.parent.map(shift);
            s
        }));
        self.all_spans.extend(tp.completion_order.into_iter().map(shift));
        for (stream, ids) in tp.named_spans {
            self.merged_named_spans.entry(stream).or_default().extend(ids.into_iter().map(shift));
        }
        self.incomplete.extend(tp.incomplete.into_iter().map(shift));
        self.threads.push(ThreadInfo { thread_id: tp.thread_id, thread_name: tp.thread_name });
    }

    /// Points every support span at its stream's unique primordial span.
    fn update_primordial(&mut self) -> Result<(), ReconstructError> {
        for (&stream_id, ids) in &self.merged_named_spans {
            let prims: Vec<SpanId> = ids.iter().copied().filter(|id| self.spans[id.0].is_primordial).collect();
            if prims.len() != 1 {
                return Err(ReconstructError::DuplicatePrimordial { stream_id, count: prims.len() });
            }
            for id in ids {
                if !self.spans[id.0].is_primordial {
                    self.spans[id.0].primordial = Some(prims[0]);
                }
            }
        }
        Ok(())
    }

    fn update_nesting_levels(&mut self) -> Result<(), ReconstructError> {
        let mut chain = Vec::new();
        for start in 0..self.spans.len() {
            if self.spans[start].nesting_level >= 0 {
                continue;
            }
            chain.clear();
            let mut cur = Some(SpanId(start));
            let mut base = -1;
            while let Some(id) = cur {
                let level = self.spans[id.0].nesting_level;
                if level >= 0 {
                    base = level;
                    break;
                }
                if chain.len() > self.spans.len() {
                    return Err(ReconstructError::CyclicNesting(SpanId(start)));
                }
                chain.push(id);
                cur = self.outer_span(id);
            }
            for (depth, id) in chain.iter().rev().enumerate() {
                self.spans[id.0].nesting_level = base + 1 + depth as i32;
            }
        }
        Ok(())
    }

    /// The enclosing span: the primordial's parent for support spans, the
    /// same-thread parent otherwise.
    pub fn outer_span(&self, id: SpanId) -> Option<SpanId> {
        let span = &self.spans[id.0];
        match span.primordial {
            Some(p) => self.spans[p.0].parent,
            None => span.parent,
        }
    }

    pub fn span(&self, id: SpanId) -> &Span {
        &self.spans[id.0]
    }

    /// Complete spans in canonical order.
    pub fn spans(&self) -> impl ExactSizeIterator<Item = (SpanId, &Span)> + '_ {
        self.all_spans.iter().map(|&id| (id, &self.spans[id.0]))
    }

    pub fn span_count(&self) -> usize {
        self.all_spans.len()
    }

    pub fn merged_named_spans(&self) -> &BTreeMap<StreamId, Vec<SpanId>> {
        &self.merged_named_spans
    }

    pub fn incomplete_spans(&self) -> impl Iterator<Item = (SpanId, &Span)> + '_ {
        self.incomplete.iter().map(|&id| (id, &self.spans[id.0]))
    }

    pub fn threads(&self) -> &[ThreadInfo] {
        &self.threads
    }

    /// Compensated cycles of every complete span, in canonical order.
    pub fn compensated(&self, costs: &CostConstants) -> Vec<(SpanId, Compensated)> {
        self.spans().map(|(id, s)| (id, s.compensated_cycles(costs))).collect()
    }

    pub fn totals(&self, costs: &CostConstants) -> ProfileTotals {
        let mut totals = ProfileTotals { incomplete_spans: self.incomplete.len(), ..Default::default() };
        for (_, s) in self.spans() {
            let c = s.compensated_cycles(costs);
            totals.complete_spans += 1;
            totals.measured_cycles += s.measured_cycles();
            totals.compensated_cycles += c.cycles;
            totals.under_compensated_spans += c.under_compensated as usize;
        }
        totals
    }

    /// Sum of compensated cycles over complete spans.
    pub fn total_compensated_cycles(&self, costs: &CostConstants) -> f64 {
        self.totals(costs).compensated_cycles
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileTotals {
    pub complete_spans: usize,
    pub incomplete_spans: usize,
    pub measured_cycles: u64,
    pub compensated_cycles: f64,
    /// Spans whose raw compensated value was negative and clamped to zero.
    pub under_compensated_spans: usize,
}

impl ProfileTotals {
    /// Cycles per span.
    pub fn cps(&self) -> f64 {
        if self.complete_spans == 0 {
            0.0
        } else {
            self.compensated_cycles / self.complete_spans as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recorder::SpanEvent as E;

    const M: MethodId = MethodId(0);

    fn asb(c: u64) -> SpanEvent {
        E::anonymous_begin(c, M)
    }
    fn psb(c: u64, s: u64) -> SpanEvent {
        E::primordial_begin(c, s, M)
    }
    fn ssb(c: u64, s: u64) -> SpanEvent {
        E::support_begin(c, s, M)
    }
    fn se(c: u64) -> SpanEvent {
        E::end(c)
    }

    #[test]
    fn single_span() {
        let tp = reconstruct_thread(&[asb(10), se(50)], 0, "main").unwrap();
        let (_, s) = tp.spans().next().unwrap();
        assert_eq!(s.measured_cycles(), 40);
        assert_eq!(s.parent, None);
    }

    #[test]
    fn nested_anonymous() {
        let tp = reconstruct_thread(&[asb(10), asb(20), se(30), se(60)], 0, "main").unwrap();
        let order: Vec<_> = tp.spans().collect();
        let (inner_id, inner) = order[0];
        let (outer_id, outer) = order[1];
        assert_eq!(inner.parent, Some(outer_id));
        assert_eq!(outer.measured_cycles(), 50);
        assert_eq!(outer.nested_cycles, 10);
        assert_eq!(outer.nested_anonymous_spans, 1);
        assert_ne!(inner_id, outer_id);
    }

    #[test]
    fn unbalanced_end() {
        let err = reconstruct_thread(&[se(10)], 3, "t").unwrap_err();
        assert_eq!(err, ReconstructError::MalformedTrace { thread_id: 3, event_index: 0, kind: MalformedKind::UnbalancedEnd });
    }

    #[test]
    fn cycles_must_increase() {
        let err = reconstruct_thread(&[asb(10), se(10)], 0, "t").unwrap_err();
        assert!(matches!(err, ReconstructError::MalformedTrace { kind: MalformedKind::NonMonotonicCycles, event_index: 1, .. }));
    }

    #[test]
    fn named_children_count_by_kind() {
        let tp = reconstruct_thread(&[asb(0), psb(10, 7), ssb(20, 7), se(30), se(40), asb(50), se(55), se(100)], 0, "t").unwrap();
        let (_, outer) = tp.spans().last().unwrap();
        assert_eq!(outer.nested_primordial_spans, 1);
        assert_eq!(outer.nested_anonymous_spans, 1);
        assert_eq!(outer.nested_support_spans, 0);
        assert_eq!(outer.nested_cycles, 30 + 5);
        let prim = tp.spans().find(|(_, s)| s.is_primordial).unwrap().1;
        assert_eq!(prim.nested_support_spans, 1);
        assert_eq!(tp.named_spans()[&7].len(), 2);
    }

    #[test]
    fn open_spans_become_incomplete() {
        let tp = reconstruct_thread(&[asb(0), asb(5), asb(6), se(9)], 0, "t").unwrap();
        assert_eq!(tp.incomplete().len(), 2);
        let p = ApplicationProfile::build(vec![tp]).unwrap();
        assert_eq!(p.span_count(), 1);
        let (_, done) = p.spans().next().unwrap();
        assert_eq!(done.nesting_level, 2);
        let totals = p.totals(&CostConstants::ZERO);
        assert_eq!((totals.incomplete_spans, totals.compensated_cycles), (2, 3.0));
    }

    #[test]
    fn merge_requires_exactly_one_primordial() {
        let a = reconstruct_thread(&[ssb(1, 7), se(2)], 0, "a").unwrap();
        let b = reconstruct_thread(&[ssb(1, 7), se(3)], 1, "b").unwrap();
        assert_eq!(
            ApplicationProfile::build(vec![a, b]).unwrap_err(),
            ReconstructError::DuplicatePrimordial { stream_id: 7, count: 0 }
        );
        let a = reconstruct_thread(&[psb(1, 7), se(2)], 0, "a").unwrap();
        let b = reconstruct_thread(&[psb(1, 7), se(3)], 1, "b").unwrap();
        assert_eq!(
            ApplicationProfile::build(vec![a, b]).unwrap_err(),
            ReconstructError::DuplicatePrimordial { stream_id: 7, count: 2 }
        );
    }

    #[test]
    fn merge_keeps_every_named_span() {
        let a = reconstruct_thread(&[psb(1, 7), ssb(2, 7), se(3), se(4)], 0, "a").unwrap();
        let b = reconstruct_thread(&[ssb(1, 7), se(3)], 1, "b").unwrap();
        let p = ApplicationProfile::build(vec![b, a]).unwrap();
        assert_eq!(p.merged_named_spans()[&7].len(), 3);
    }

    #[test]
    fn support_spans_inherit_outer_from_primordial() {
        // Thread 0: A0 > A1 > A2 > A3 > A4 > P (levels 0..=5); thread 1: S of the same stream.
        let mut ev0: Vec<SpanEvent> = (0..5).map(|i| asb(i * 10)).collect();
        ev0.push(psb(100, 3));
        ev0.push(se(200));
        ev0.extend((0..5).map(|i| se(300 + i)));
        let t0 = reconstruct_thread(&ev0, 0, "caller").unwrap();
        let t1 = reconstruct_thread(&[ssb(5, 3), se(50)], 1, "worker").unwrap();
        let p = ApplicationProfile::build(vec![t0, t1]).unwrap();
        let prim = p.spans().find(|(_, s)| s.is_primordial).unwrap();
        let supp = p.spans().find(|(_, s)| s.is_support()).unwrap();
        assert_eq!(supp.1.primordial, Some(prim.0));
        assert_eq!(supp.1.parent, None);
        let outer = p.outer_span(supp.0).unwrap();
        assert_eq!(Some(outer), prim.1.parent);
        assert_eq!(p.span(outer).nesting_level, 4);
        assert_eq!(supp.1.nesting_level, 5);
        assert_eq!(prim.1.nesting_level, 5);
    }

    #[test]
    fn top_level_primordial_support_has_no_outer() {
        let t0 = reconstruct_thread(&[psb(1, 0), se(10)], 0, "a").unwrap();
        let t1 = reconstruct_thread(&[ssb(2, 0), se(9)], 1, "b").unwrap();
        let p = ApplicationProfile::build(vec![t0, t1]).unwrap();
        let supp = p.spans().find(|(_, s)| s.is_support()).unwrap().0;
        assert_eq!(p.outer_span(supp), None);
        assert!(p.spans().all(|(_, s)| s.nesting_level == 0));
    }

    #[test]
    fn chain_levels() {
        let tp = reconstruct_thread(&[asb(1), asb(2), asb(3), se(4), se(5), se(6)], 0, "t").unwrap();
        let p = ApplicationProfile::build(vec![tp]).unwrap();
        let levels: Vec<i32> = p.spans().map(|(_, s)| s.nesting_level).collect();
        assert_eq!(levels, vec![2, 1, 0]);
    }

    #[test]
    fn cyclic_outer_chain_is_rejected() {
        // Stream 0's primordial runs inside a support span of stream 1 and vice versa.
        let t0 = reconstruct_thread(&[ssb(1, 1), psb(2, 0), se(3), se(4)], 0, "a").unwrap();
        let t1 = reconstruct_thread(&[ssb(1, 0), psb(2, 1), se(3), se(4)], 1, "b").unwrap();
        assert!(matches!(ApplicationProfile::build(vec![t0, t1]), Err(ReconstructError::CyclicNesting(_))));
    }

    #[test]
    fn eq2_zero_costs_is_identity() {
        let tp = reconstruct_thread(&[asb(0), se(10_000)], 0, "t").unwrap();
        let (_, s) = tp.spans().next().unwrap();
        assert_eq!(s.compensated_cycles(&CostConstants::ZERO).cycles, 10_000.0);
    }

    #[test]
    fn eq2_table_constants() {
        // measured 5000, two nested anonymous children totalling 1000 cycles.
        let tp = reconstruct_thread(&[asb(0), asb(100), se(600), asb(1000), se(1500), se(5000)], 0, "t").unwrap();
        let (_, s) = tp.spans().last().unwrap();
        let costs = CostConstants { ic: 171.63, oc_anon: 184.25, oc_prim: 0.0, oc_supp: 0.0 };
        let c = s.compensated_cycles(&costs);
        assert!((c.cycles - 3459.87).abs() < 1e-9, "{}", c.cycles);
        assert!(!c.under_compensated);
    }

    #[test]
    fn eq2_negative_clamps() {
        let tp = reconstruct_thread(&[asb(0), asb(10), se(20), se(300)], 0, "t").unwrap();
        let (_, s) = tp.spans().last().unwrap();
        // measured 300, nested 10: exclusive 290.
        let costs = CostConstants { ic: 171.63, oc_anon: 184.25, oc_prim: 0.0, oc_supp: 0.0 };
        let c = s.compensated_cycles(&costs);
        assert!((c.raw - (290.0 - 184.25 - 171.63)).abs() < 1e-9);
        assert_eq!(c.cycles, 0.0);
        assert!(c.under_compensated);
    }

    #[test]
    fn totals_of_empty_and_independent_spans() {
        let p = ApplicationProfile::build(vec![]).unwrap();
        assert_eq!(p.total_compensated_cycles(&CostConstants::ZERO), 0.0);
        let tp = reconstruct_thread(&[asb(0), se(100), asb(200), se(300)], 0, "t").unwrap();
        let p = ApplicationProfile::build(vec![tp]).unwrap();
        assert_eq!(p.total_compensated_cycles(&CostConstants::ZERO), 200.0);
    }

    #[test]
    fn build_is_order_independent() {
        let a = reconstruct_thread(&[psb(1, 0), se(10)], 0, "a").unwrap();
        let b = reconstruct_thread(&[ssb(2, 0), se(9)], 1, "b").unwrap();
        let p1 = ApplicationProfile::build(vec![a.clone(), b.clone()]).unwrap();
        let p2 = ApplicationProfile::build(vec![b, a]).unwrap();
        let s1: Vec<Span> = p1.spans().map(|(_, s)| s.clone()).collect();
        let s2: Vec<Span> = p2.spans().map(|(_, s)| s.clone()).collect();
        assert_eq!(s1, s2);
    }
}
