//! Ranks code locations by compensated cycles and stream count.

use std::sync::Arc;

use spanprof::analysis::hot_locations;
use spanprof::cycles::ScriptedSource;
use spanprof::probe::{profile_sequential, Profiler};
use spanprof::reconstruct::{ApplicationProfile, CostConstants};
use spanprof::recorder::RecorderConfig;

fn main() {
    let source = Arc::new(ScriptedSource::new(10));
    let profiler = Profiler::new(source.clone(), RecorderConfig::memory());

    // Many tiny streams in one place, a few heavy ones elsewhere.
    for i in 0..900 {
        profile_sequential(&profiler, "words::normalize", || source.advance(5 + i % 7));
    }
    for _ in 0..80 {
        profile_sequential(&profiler, "words::encode", || source.advance(40));
    }
    for _ in 0..20 {
        profile_sequential(&profiler, "index::build", || source.advance(150));
    }

    let costs = CostConstants { ic: 10.0, oc_anon: 10.0, oc_prim: 10.0, oc_supp: 10.0 };
    let names = profiler.recorder().locations().snapshot();
    let profile = ApplicationProfile::from_traces(&profiler.recorder().drain()).unwrap();
    println!("{:<18} {:>6} {:>8} {:>9} {:>8}", "location", "spans", "%spans", "cycles", "%cycles");
    for loc in hot_locations(&profile, &costs, &names, 3) {
        println!(
            "{:<18} {:>6} {:>7.2}% {:>9.0} {:>7.2}%",
            loc.qualified_name,
            loc.span_count,
            100.0 * loc.share_of_total_spans,
            loc.total_compensated_cycles,
            100.0 * loc.share_of_total_cycles
        );
    }
}
