//! Invariants over randomized inputs.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{generate, trace, GenParams, GenTrace};
use spanprof::analysis::worker_cv;
use spanprof::codec::{decode_trace, encode_trace};
use spanprof::cycles::{CycleSourceDescriptor, CycleSourceKind};
use spanprof::reconstruct::{ApplicationProfile, CostConstants, Span};
use spanprof::recorder::MethodId;
use spanprof::stats::{coefficient_of_variation, IqrFence};

fn gen(seed: u64, spans: usize, open_bias: f64, leave_open: bool) -> GenTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = GenParams { spans, open_bias, first_stream: 0, external_streams: &[], leave_open, max_gap: 100_000 };
    generate(&mut rng, &params)
}

fn costs() -> impl Strategy<Value = CostConstants> {
    (0.0..500.0f64, 0.0..500.0f64, 0.0..500.0f64, 0.0..500.0f64)
        .prop_map(|(ic, oc_anon, oc_prim, oc_supp)| CostConstants { ic, oc_anon, oc_prim, oc_supp })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_cost_compensation_partitions_root_time(seed: u64, spans in 1usize..400, bias in 0.1..0.9f64) {
        let g = gen(seed, spans, bias, false);
        let p = ApplicationProfile::from_traces(&[trace(0, &g)]).unwrap();
        let roots: u64 = p.spans().filter(|(_, s)| s.parent.is_none()).map(|(_, s)| s.measured_cycles()).sum();
        let totals = p.totals(&CostConstants::ZERO);
        prop_assert_eq!(totals.compensated_cycles, roots as f64);
        prop_assert_eq!(totals.under_compensated_spans, 0);
    }

    #[test]
    fn compensation_never_negative(
        measured in 0u64..100_000,
        nested_frac in 0.0..1.0f64,
        n in (0u64..20, 0u64..20, 0u64..20),
        c in costs(),
    ) {
        let nested = (measured as f64 * nested_frac) as u64;
        let span = Span {
            cycles_begin: 0,
            cycles_end: Some(measured),
            stream_id: -1,
            method_id: MethodId(0),
            thread_id: 0,
            is_primordial: false,
            nested_cycles: nested,
            nested_anonymous_spans: n.0,
            nested_primordial_spans: n.1,
            nested_support_spans: n.2,
            parent: None,
            primordial: None,
            nesting_level: 0,
        };
        let out = span.compensated_cycles(&c);
        let raw = measured as f64 - nested as f64
            - n.0 as f64 * c.oc_anon - n.1 as f64 * c.oc_prim - n.2 as f64 * c.oc_supp - c.ic;
        prop_assert!((out.raw - raw).abs() < 1e-6);
        prop_assert!(out.cycles >= 0.0);
        prop_assert_eq!(out.under_compensated, out.raw < 0.0);
        if !out.under_compensated {
            prop_assert_eq!(out.cycles, out.raw);
        }
    }

    #[test]
    fn compensated_totals_shrink_as_costs_grow(seed: u64, spans in 1usize..300, c in costs(), extra in 0.0..100.0f64) {
        let g = gen(seed, spans, 0.5, true);
        let p = ApplicationProfile::from_traces(&[trace(0, &g)]).unwrap();
        let more = CostConstants { ic: c.ic + extra, oc_anon: c.oc_anon + extra, oc_prim: c.oc_prim + extra, oc_supp: c.oc_supp + extra };
        prop_assert!(p.total_compensated_cycles(&more) <= p.total_compensated_cycles(&c));
    }

    #[test]
    fn codec_round_trips(seed: u64, spans in 0usize..300, name in "[a-z0-9-]{0,24}") {
        let g = gen(seed, spans.max(1), 0.5, true);
        let mut t = trace(7, &g);
        t.thread_name = name;
        let d = CycleSourceDescriptor { kind: CycleSourceKind::MonotonicClockTicks, nominal_frequency_hz: Some(1_000_000_000), platform_label: "test".into() };
        let bytes = encode_trace(&d, &t);
        let back = decode_trace(&bytes).unwrap();
        prop_assert_eq!(&back.descriptor, &d);
        prop_assert_eq!(&back.trace, &t);
    }

    #[test]
    fn truncation_yields_an_error_or_a_prefix(seed: u64, spans in 1usize..100, cut in 0.0..1.0f64) {
        let g = gen(seed, spans, 0.5, false);
        let d = CycleSourceDescriptor { kind: CycleSourceKind::Scripted, nominal_frequency_hz: None, platform_label: "s".into() };
        let bytes = encode_trace(&d, &trace(0, &g));
        let len = ((bytes.len() - 1) as f64 * cut) as usize;
        // A cut on a record boundary is a shorter valid trace.
        match decode_trace(&bytes[..len]) {
            Ok(f) => prop_assert!(g.events.starts_with(&f.trace.events)),
            Err(e) => prop_assert!(e.offset <= len),
        }
    }

    #[test]
    fn fence_keeps_the_interquartile_bulk(xs in prop::collection::vec(-1e6..1e6f64, 4..200), k in 0.0..3.0f64) {
        let fence = IqrFence { k };
        let kept = fence.filter(&xs);
        let (lo, hi) = fence.bounds(&xs).unwrap();
        prop_assert!(kept.iter().all(|x| (lo..=hi).contains(x)));
        prop_assert_eq!(kept.len(), xs.iter().filter(|x| (lo..=hi).contains(*x)).count());
        // Every order statistic between the quartile positions survives.
        let last = (xs.len() - 1) as f64;
        let inner = (0.75 * last).floor() as usize + 1 - (0.25 * last).ceil() as usize;
        prop_assert!(kept.len() >= inner);
    }

    #[test]
    fn cv_is_scale_free(xs in prop::collection::vec(0.1..1e6f64, 2..50), scale in 0.001..1000.0f64) {
        let a = coefficient_of_variation(&xs).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
        let b = coefficient_of_variation(&scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn idle_workers_only_raise_cv(xs in prop::collection::vec(1.0..1e6f64, 1..16), idle in 1usize..16) {
        prop_assert!(worker_cv(xs.iter().copied(), idle) > worker_cv(xs.iter().copied(), 0));
    }
}
