//! Calibrates on the best available cycle source, then runs a ladder of
//! sequential workloads from 10^2 to 10^6 cycles per span and compares the
//! compensated totals with uninstrumented baselines.
//!
//! Run with `cargo run --release --example accuracy_experiment [TOTAL_WORK [RUNS]]`.

use spanprof::analysis::correlation;
use spanprof::bench::{Harness, WorkloadSpec};
use spanprof::calibration::{calibrate, CalibrationConfig, SampleKind};
use spanprof::cycles::{open_source, SourceSelection};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let total_work: u64 = args.next().map_or(Ok(20_000_000), |a| a.parse())?;
    let runs: usize = args.next().map_or(Ok(5), |a| a.parse())?;
    let source = open_source(SourceSelection::Auto)?;
    println!("cycle source: {}", source.descriptor().kind);

    let model = calibrate(source.clone(), &CalibrationConfig::default().with_pairs(100_000), &SampleKind::ALL)?;
    let costs = model.constants();
    println!(
        "IC {:.1}  OC_ANON {:.1}  OC_PRIM {:.1}  OC_SUPP {:.1}",
        costs.ic, costs.oc_anon, costs.oc_prim, costs.oc_supp
    );

    let harness = Harness::new(source, 1);
    let mut cps = Vec::new();
    let mut accuracy = Vec::new();
    println!("{:>11} {:>8} {:>10} {:>13} {:>13} {:>9}", "workload", "spans", "CPS", "baseline", "compensated", "accuracy");
    for spec in WorkloadSpec::cps_ladder(total_work) {
        let out = harness.run_accuracy_experiment(&spec, runs, 2, &costs)?;
        let r = &out.record;
        println!(
            "{:>11} {:>8} {:>10.0} {:>13.0} {:>13.0} {:>9.4}",
            spec.name, out.spans_per_run, r.cps, r.baseline_cycles, r.compensated_cycles, r.accuracy
        );
        cps.push(out.record.cps.log10());
        accuracy.push(out.record.accuracy);
    }
    println!("PCC(log10 CPS, accuracy) = {:.3}", correlation(&cps, &accuracy)?);
    Ok(())
}
