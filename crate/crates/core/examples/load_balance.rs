//! Per-worker cycle distribution of parallel streams. Moving more of the work
//! onto the first task raises the coefficient of variation towards its
//! maximum, the square root of the worker count.
//!
//! `cargo run --release --example load_balance`

use spanprof::analysis::load_balance;
use spanprof::bench::{Harness, WorkloadSpec};
use spanprof::calibration::{calibrate, CalibrationConfig, SampleKind};
use spanprof::cycles::{open_source, SourceSelection};
use spanprof::reconstruct::ApplicationProfile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workers = 4;
    let source = open_source(SourceSelection::Auto)?;
    let costs = calibrate(source.clone(), &CalibrationConfig::default().with_pairs(20_000), &SampleKind::ALL)?.constants();
    let harness = Harness::new(source, workers);

    for skew in [0.0, 0.5, 0.9, 1.0] {
        let spec = WorkloadSpec::parallel("balance", 64, 200_000, workers).with_skew(skew);
        let (_, profiler) = harness.profiled_iteration(&spec, None);
        let profile = ApplicationProfile::from_traces(&profiler.recorder().drain())?;
        let report = load_balance(&profile, &costs)?.with_pool_size(workers);
        let shares: Vec<String> = {
            let total: f64 = report.per_worker_cycles.values().sum();
            report.per_worker_cycles.values().map(|c| format!("{:.2}", c / total)).collect()
        };
        println!(
            "skew {skew:.1}: CV {:.3} over {} workers, {} tasks, observed worker shares [{}]",
            report.cv,
            report.worker_count(),
            report.task_count,
            shares.join(", ")
        );
    }
    println!("upper bound sqrt({workers}) = {:.3}", (workers as f64).sqrt());
    Ok(())
}
