//! Random well-formed traces and a brute-force containment oracle.

#![allow(dead_code)]

use rand::Rng;
use spanprof::recorder::{MethodId, SpanEvent, ThreadTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Anon,
    Prim,
    Supp,
}

/// A span as the generator laid it out.
#[derive(Debug, Clone)]
pub struct GenSpan {
    pub begin: u64,
    pub end: Option<u64>,
    pub kind: Kind,
    pub stream: i64,
    pub method: u32,
}

#[derive(Debug, Clone)]
pub struct GenTrace {
    pub spans: Vec<GenSpan>,
    pub events: Vec<SpanEvent>,
    /// Streams whose primordial span has ended, usable by supports elsewhere.
    pub closed_streams: Vec<i64>,
}

pub struct GenParams<'a> {
    pub spans: usize,
    /// Probability of opening rather than closing while both are possible.
    pub open_bias: f64,
    /// First stream id this trace may hand out.
    pub first_stream: i64,
    /// Streams defined elsewhere that supports may join.
    pub external_streams: &'a [i64],
    /// Leave the still-open spans at the end unterminated.
    pub leave_open: bool,
    /// Gaps between events are log-uniform in `[1, max_gap]`.
    pub max_gap: u64,
}

pub fn generate(rng: &mut impl Rng, p: &GenParams) -> GenTrace {
    let mut spans: Vec<GenSpan> = Vec::with_capacity(p.spans);
    let mut events = Vec::with_capacity(2 * p.spans);
    let mut stack: Vec<usize> = Vec::new();
    let mut closed: Vec<i64> = Vec::new();
    let mut next_stream = p.first_stream;
    let mut t: u64 = rng.random_range(0..1000);
    let limit = if p.leave_open { rng.random_range(0..=3.min(p.spans)) } else { 0 };
    loop {
        let can_open = spans.len() < p.spans;
        let must_stop = !can_open && stack.len() <= limit;
        if must_stop {
            break;
        }
        t += rng.random_range(0.0..=(p.max_gap as f64).ln()).exp().round().max(1.0) as u64;
        if can_open && (stack.is_empty() || rng.random_bool(p.open_bias)) {
            let method = rng.random_range(0..8);
            let roll: f64 = rng.random();
            let joinable = closed.len() + p.external_streams.len();
            let (kind, stream) = if roll < 0.2 {
                next_stream += 1;
                (Kind::Prim, next_stream - 1)
            } else if roll < 0.5 && joinable > 0 {
                let i = rng.random_range(0..joinable);
                let s = if i < closed.len() { closed[i] } else { p.external_streams[i - closed.len()] };
                (Kind::Supp, s)
            } else {
                (Kind::Anon, -1)
            };
            events.push(match kind {
                Kind::Anon => SpanEvent::anonymous_begin(t, MethodId(method)),
                Kind::Prim => SpanEvent::primordial_begin(t, stream as u64, MethodId(method)),
                Kind::Supp => SpanEvent::support_begin(t, stream as u64, MethodId(method)),
            });
            stack.push(spans.len());
            spans.push(GenSpan { begin: t, end: None, kind, stream, method });
        } else {
            let i = stack.pop().unwrap();
            spans[i].end = Some(t);
            events.push(SpanEvent::end(t));
            if spans[i].kind == Kind::Prim {
                closed.push(spans[i].stream);
            }
        }
    }
    GenTrace { spans, events, closed_streams: closed }
}

/// Log-uniform span count in `[1, max_events / 2]`.
pub fn log_uniform_spans(rng: &mut impl Rng, max_events: usize) -> usize {
    let hi = (max_events as f64 / 2.0).ln();
    (rng.random_range(0.0..=hi).exp() as usize).clamp(1, max_events / 2)
}

pub fn trace(thread_id: u64, g: &GenTrace) -> ThreadTrace {
    ThreadTrace { thread_id, thread_name: format!("gen-{thread_id}"), events: g.events.clone() }
}

/// Expected reconstruction of one span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleSpan {
    pub measured: Option<u64>,
    pub parent: Option<usize>,
    pub nested_cycles: u64,
    pub nested_anon: u64,
    pub nested_prim: u64,
    pub nested_supp: u64,
    pub primordial: Option<usize>,
    pub level: i32,
}

/// Interval containment over a single thread, independent of any stack: the
/// parent of a span is the nearest earlier-starting span that is still open
/// when it ends (or never ends).
pub fn oracle(spans: &[GenSpan]) -> Vec<OracleSpan> {
    // Unterminated spans outlive everything; earlier-opened ones outlive later ones.
    let end_of = |i: usize| spans[i].end.unwrap_or(u64::MAX - i as u64);
    let mut out: Vec<OracleSpan> = spans
        .iter()
        .map(|s| OracleSpan {
            measured: s.end.map(|e| e - s.begin),
            parent: None,
            nested_cycles: 0,
            nested_anon: 0,
            nested_prim: 0,
            nested_supp: 0,
            primordial: None,
            level: 0,
        })
        .collect();
    for i in 0..spans.len() {
        let mine = end_of(i);
        out[i].parent = (0..i).rev().find(|&j| end_of(j) > mine);
    }
    for i in 0..spans.len() {
        let (Some(p), Some(m)) = (out[i].parent, out[i].measured) else { continue };
        out[p].nested_cycles += m;
        match spans[i].kind {
            Kind::Anon => out[p].nested_anon += 1,
            Kind::Prim => out[p].nested_prim += 1,
            Kind::Supp => out[p].nested_supp += 1,
        }
    }
    for i in 0..spans.len() {
        if spans[i].kind == Kind::Supp {
            out[i].primordial = spans.iter().position(|s| s.kind == Kind::Prim && s.stream == spans[i].stream);
        }
    }
    // Outer spans always start earlier, so one forward pass settles every level.
    for i in 0..spans.len() {
        let outer = match out[i].primordial {
            Some(p) => out[p].parent,
            None => out[i].parent,
        };
        out[i].level = outer.map_or(0, |o| out[o].level + 1);
    }
    out
}
