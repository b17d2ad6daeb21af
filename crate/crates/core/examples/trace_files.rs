//! Dumps traces to disk, then loads and analyzes them the way `spanprof analyze` does.

use std::sync::Arc;

use spanprof::analysis::{build_report, ReportOptions};
use spanprof::codec::load_trace_dir;
use spanprof::cycles::MonotonicTicks;
use spanprof::probe::{profile_sequential, Profiler};
use spanprof::reconstruct::{ApplicationProfile, CostConstants};
use spanprof::recorder::RecorderConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("spanprof-traces-{}", std::process::id()));
    // A small buffer forces several dumps while recording.
    let profiler = Profiler::new(Arc::new(MonotonicTicks::new()), RecorderConfig::directory(&dir).with_capacity(64));
    std::thread::scope(|s| {
        for t in 0..3 {
            let profiler = &profiler;
            s.spawn(move || {
                for i in 0..100u64 {
                    profile_sequential(profiler, format!("worker{t}::step"), || (0..i).sum::<u64>());
                }
            });
        }
    });
    for path in profiler.recorder().flush_all()? {
        println!("wrote {}", path.display());
    }

    let set = load_trace_dir(&dir, None)?;
    let profile = ApplicationProfile::from_trace_files(&set.files)?;
    let report = build_report(&profile, &CostConstants::ZERO, &set.locations, &ReportOptions::default())?;
    print!("{}", report.summary(5));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
