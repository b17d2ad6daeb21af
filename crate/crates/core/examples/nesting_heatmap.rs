//! Builds the nesting-level by cycles heatmap of a deeply recursive workload and
//! writes it as CSV and SVG into a temporary directory.

use std::sync::Arc;

use spanprof::analysis::build_heatmap;
use spanprof::bench::{Harness, NestingProfile, WorkloadSpec};
use spanprof::cycles::ScriptedSource;
use spanprof::reconstruct::{ApplicationProfile, CostConstants};

fn main() -> std::io::Result<()> {
    let step = 25;
    let harness = Harness::scripted(Arc::new(ScriptedSource::new(step)), 1);
    let spec = WorkloadSpec::sequential("recursive", 10, 400)
        .with_nesting(NestingProfile::DeepRecursive { depth: 44 })
        .with_jitter(0.9, 42);
    let (_, profiler) = harness.profiled_iteration(&spec, None);
    let profile = ApplicationProfile::from_traces(&profiler.recorder().drain()).unwrap();

    let s = step as f64;
    let heatmap = build_heatmap(&profile, &CostConstants { ic: s, oc_anon: s, oc_prim: s, oc_supp: s });
    print!("{}", heatmap.to_csv());
    println!("{} spans over {} nesting groups", heatmap.total_count(), heatmap.occupied_groups());

    let dir = std::env::temp_dir().join("spanprof-heatmap");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("heatmap.csv"), heatmap.to_csv())?;
    std::fs::write(dir.join("heatmap.svg"), heatmap.to_svg())?;
    println!("wrote {}", dir.display());
    Ok(())
}
