//! Records nested pipelines on a scripted cycle source, where every counter read
//! costs exactly one step, and shows that subtracting nested spans and the
//! calibrated costs recovers the work each span did itself.

use std::sync::Arc;

use spanprof::calibration::{calibrate, CalibrationConfig, SampleKind};
use spanprof::cycles::ScriptedSource;
use spanprof::probe::{profile_sequential, Profiler};
use spanprof::reconstruct::ApplicationProfile;
use spanprof::recorder::RecorderConfig;

fn main() {
    let source = Arc::new(ScriptedSource::new(40));
    let model = calibrate(source.clone(), &CalibrationConfig::default().with_pairs(1_000), &SampleKind::ALL).unwrap();
    let costs = model.constants();
    println!("calibrated: IC {} OC_ANON {} OC_PRIM {} OC_SUPP {}", costs.ic, costs.oc_anon, costs.oc_prim, costs.oc_supp);

    let profiler = Profiler::new(source.clone(), RecorderConfig::memory());
    profile_sequential(&profiler, "demo::outer", || {
        source.advance(1_000);
        for work in [200, 300] {
            profile_sequential(&profiler, "demo::inner", || source.advance(work));
        }
    });

    let profile = ApplicationProfile::from_traces(&profiler.recorder().drain()).unwrap();
    println!("{:>4} {:>9} {:>7} {:>12}", "span", "measured", "nested", "compensated");
    for (id, span) in profile.spans() {
        let c = span.compensated_cycles(&costs);
        println!("{:>4} {:>9} {:>7} {:>12}", id.0, span.measured_cycles(), span.nested_cycles, c.cycles);
    }
    println!("total compensated: {}", profile.total_compensated_cycles(&costs));
}
