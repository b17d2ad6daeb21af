//! Profiles ordinary iterator pipelines. Each terminal operation becomes one
//! anonymous span attributed to the function that runs it; a pipeline executed
//! inside another one becomes a nested span.

use std::sync::Arc;

use spanprof::cycles::MonotonicTicks;
use spanprof::location;
use spanprof::probe::{profile_sequential, ProfileIterator, Profiler};
use spanprof::reconstruct::{ApplicationProfile, CostConstants};
use spanprof::recorder::RecorderConfig;

fn word_lengths(profiler: &Profiler, text: &str) -> Vec<usize> {
    text.split_whitespace().map(str::len).profiled_collect(profiler, location!())
}

fn longest_line(profiler: &Profiler, lines: &[&str]) -> usize {
    profile_sequential(profiler, location!(), || {
        lines
            .iter()
            .map(|line| word_lengths(profiler, line).into_iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    })
}

fn main() {
    let profiler = Profiler::new(Arc::new(MonotonicTicks::new()), RecorderConfig::memory());
    let lines = ["the quick brown fox", "jumps over", "the lazy dog and keeps running"];
    println!("longest line has {} letters", longest_line(&profiler, &lines));

    let names = profiler.recorder().locations().snapshot();
    let profile = ApplicationProfile::from_traces(&profiler.recorder().drain()).expect("well-formed traces");
    for (id, span) in profile.spans() {
        println!(
            "span {:>2}  level {}  {:<45} {:>6} ticks ({} nested spans)",
            id.0,
            span.nesting_level,
            names[span.method_id.0 as usize],
            span.measured_cycles(),
            span.nested_anonymous_spans
        );
    }
    let totals = profile.totals(&CostConstants::ZERO);
    println!("{} spans, {} ticks in total", totals.complete_spans, totals.measured_cycles);
}
