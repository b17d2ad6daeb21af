//! Estimates the instrumentation cost constants for this machine and writes the
//! cost model next to the working directory.
//!
//! `cargo run --release --example calibrate [PAIRS]`

use std::path::Path;

use spanprof::calibration::{calibrate, CalibrationConfig, SampleKind};
use spanprof::cycles::{open_source, SourceSelection};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs: usize = std::env::args().nth(1).map_or(Ok(200_000), |a| a.parse())?;
    let source = open_source(SourceSelection::Auto)?;
    let model = calibrate(source, &CalibrationConfig::default().with_pairs(pairs), &SampleKind::ALL)?;

    println!("source: {} ({})", model.source.kind, model.source.platform_label);
    let c = &model.costs;
    for (name, est) in [("IC", &c.ic), ("OC_ANON", &c.oc_anon), ("OC_PRIM", &c.oc_prim), ("OC_SUPP", &c.oc_supp)] {
        println!(
            "{name:<8} {:>8.2}  CV {:.2}  kept {}/{}",
            est.mean_cycles,
            est.cv.unwrap_or(f64::NAN),
            est.samples_kept,
            est.samples_total
        );
    }
    match model.direction_check {
        Some(true) => println!("OC_PRIM >= OC_SUPP >= OC_ANON holds"),
        Some(false) => println!("unexpected outer-cost ordering"),
        None => {}
    }
    for w in &model.warnings {
        println!("warning: {w}");
    }
    let out = Path::new("costs.json");
    model.write(out)?;
    println!("wrote {}", out.display());
    Ok(())
}
