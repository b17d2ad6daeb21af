//! Exit codes, environment overrides and the scripted pipeline through the binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_spanprof");

fn run(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).current_dir(dir).env_remove("SPANPROF_SOURCE");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SCRIPTED: &[(&str, &str)] = &[("SPANPROF_SOURCE", "scripted:50")];

/// calibrate + one profiled bench iteration; returns the trace directory.
fn scripted_traces(dir: &Path) -> String {
    assert!(run(dir, &["calibrate", "--pairs", "2000", "--out", "costs.json"], SCRIPTED).status.success());
    let bench = [
        "bench", "--workload", "e2e", "--spans", "20", "--cps", "1000", "--fanout", "3", "--workers", "1", "--warmup", "1",
        "--iterations", "1", "--profile", "--out", "bench",
    ];
    assert!(run(dir, &bench, SCRIPTED).status.success());
    "bench/traces/iter-000".into()
}

#[test]
fn analyze_without_traces_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["analyze"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--traces"));
    assert!(o.stdout.is_empty());
}

#[test]
fn help_lists_every_subcommand() {
    let o = run(Path::new("."), &["--help"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["calibrate", "analyze", "report", "bench"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn truncated_trace_names_file_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let traces = scripted_traces(dir.path());
    let file = dir.path().join(&traces).join("thread-0000.sptr");
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..bytes.len() - 5]).unwrap();
    let o = run(dir.path(), &["analyze", "--traces", &traces, "--costs", "costs.json"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("thread-0000.sptr") && err.contains("byte offset"), "{err}");
}

#[test]
fn mixed_sources_are_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let traces = scripted_traces(dir.path());
    assert!(run(dir.path(), &["calibrate", "--pairs", "1000", "--out", "ticks.json"], &[("SPANPROF_SOURCE", "ticks")]).status.success());
    let o = run(dir.path(), &["analyze", "--traces", &traces, "--costs", "ticks.json"], &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["analyze", "--traces", "nowhere"], &[]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["report", "--in", "nowhere.json"], &[]).status.code(), Some(3));
    fs::write(dir.path().join("bad.json"), "{").unwrap();
    assert_eq!(run(dir.path(), &["report", "--in", "bad.json"], &[]).status.code(), Some(2));
}

#[test]
fn flags_override_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env = [("SPANPROF_SOURCE", "ticks"), ("SPANPROF_CALIBRATE_PAIRS", "1000")];
    let o = run(dir.path(), &["--source", "scripted:7", "calibrate", "--out", "c.json"], &env);
    assert!(o.status.success(), "{}", stderr(&o));
    let model: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(model["source"]["platform_label"], "scripted(step=7)");
    assert_eq!(model["pairs_per_cost"], 1000);
    assert_eq!(model["costs"]["ic"]["mean_cycles"], 7.0);
}

#[test]
fn analyze_does_not_touch_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let traces = scripted_traces(dir.path());
    let snapshot = |d: &Path| {
        let mut files: Vec<_> = fs::read_dir(d.join(&traces)).unwrap().map(|e| e.unwrap().path()).collect();
        files.push(d.join("costs.json"));
        files.sort();
        files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let before = snapshot(dir.path());
    let o = run(dir.path(), &["analyze", "--traces", &traces, "--costs", "costs.json"], &[]);
    assert!(o.status.success());
    assert!(o.stderr.is_empty(), "{}", stderr(&o));
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn per_span_report_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let traces = scripted_traces(dir.path());
    let args = ["analyze", "--traces", &traces, "--costs", "costs.json", "--baseline", "bench/bench.json", "--per-span"];
    let o = run(dir.path(), &args, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/e2e_spans.json");
    if std::env::var_os("SPANPROF_BLESS").is_some() {
        fs::write(&golden, &o.stdout).unwrap();
    }
    assert_eq!(String::from_utf8_lossy(&o.stdout), fs::read_to_string(golden).unwrap());
}

#[test]
fn report_writes_heatmap_files() {
    let dir = tempfile::tempdir().unwrap();
    let traces = scripted_traces(dir.path());
    let o = run(dir.path(), &["analyze", "--traces", &traces, "--costs", "costs.json", "--out", "r.json"], &[]);
    assert!(o.status.success());
    let o = run(dir.path(), &["report", "--in", "r.json", "--heatmap", "h.csv", "--svg", "h.svg", "--hot-locations", "1"], &[]);
    assert!(o.status.success());
    let summary = String::from_utf8_lossy(&o.stdout);
    assert!(summary.contains("bench::e2e::inner") && !summary.contains("bench::e2e::outer"), "{summary}");
    let csv = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "0-9,0:0,0:0,0:0,80:80000,0:0,0:0,0:0,0:0,0:0,0:0,0:0,0:0");
    assert!(fs::read_to_string(dir.path().join("h.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn seeded_bench_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "bench", "--mode", "par", "--spans", "16", "--cps", "300", "--jitter", "0.5", "--seed", "9", "--workers", "1",
            "--warmup", "0", "--iterations", "1", "--profile", "--out", out,
        ]
    };
    for out in ["a", "b"] {
        assert!(run(dir.path(), &args(out), SCRIPTED).status.success());
    }
    let read = |out: &str| fs::read(dir.path().join(out).join("traces/iter-000/thread-0000.sptr")).unwrap();
    assert_eq!(read("a"), read("b"));
}
