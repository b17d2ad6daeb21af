//! A fork/join pipeline on a rayon pool. The first task generates the stream id
//! (primordial span), every forked task reuses it (support spans), and the
//! reconstruction links the support spans to the span that started the stream.

use std::sync::Arc;

use spanprof::cycles::MonotonicTicks;
use spanprof::location;
use spanprof::probe::{profile_sequential, ParallelStream, Profiler};
use spanprof::reconstruct::ApplicationProfile;
use spanprof::recorder::RecorderConfig;

fn checksum(profiler: &Profiler, data: &[u64]) -> u64 {
    ParallelStream::new(data)
        .grain(data.len() / 32)
        .map_reduce(profiler, location!(), |x| x.wrapping_mul(2_654_435_761) % 1_000_003, || 0, |a, b| a + b)
}

fn main() {
    let profiler = Profiler::new(Arc::new(MonotonicTicks::new()), RecorderConfig::memory());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let data: Vec<u64> = (0..1 << 16).collect();

    let sum = pool.install(|| profile_sequential(&profiler, location!(), || checksum(&profiler, &data)));
    println!("checksum {sum}");

    let profile = ApplicationProfile::from_traces(&profiler.recorder().drain()).expect("well-formed traces");
    for (stream, ids) in profile.merged_named_spans() {
        let primordials = ids.iter().filter(|&&id| profile.span(id).is_primordial).count();
        let threads: std::collections::BTreeSet<u64> = ids.iter().map(|&id| profile.span(id).thread_id).collect();
        let outer = ids.iter().find_map(|&id| profile.outer_span(id));
        println!(
            "stream {stream}: {} spans ({primordials} primordial, {} support) on threads {threads:?}, outer span {:?}",
            ids.len(),
            ids.len() - primordials,
            outer.map(|o| o.0)
        );
    }
}
