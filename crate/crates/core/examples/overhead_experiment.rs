//! Paired plain/profiled timings of a low- and a high-CPS workload, reported as
//! slowdown factors with a 95% confidence interval.

use spanprof::bench::{Harness, WorkloadSpec};
use spanprof::cycles::{open_source, SourceSelection};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let harness = Harness::new(open_source(SourceSelection::Auto)?, 1);
    for spec in [WorkloadSpec::sequential("low-cps", 50_000, 100), WorkloadSpec::sequential("high-cps", 5, 1_000_000)] {
        let out = harness.run_overhead_experiment(&spec, 20, 3)?;
        let ci = out.ci95.expect("at least two pairs");
        println!(
            "{:<9} overhead {:.3}x  95% CI [{:.3}, {:.3}] over {} pairs",
            spec.name, out.mean_factor, ci.lower, ci.upper, ci.n
        );
    }
    Ok(())
}
