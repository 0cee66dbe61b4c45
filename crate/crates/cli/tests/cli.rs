use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn multifield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multifield")).args(args).output().expect("binary runs")
}

fn run_into(config: &str, dir: &Path) -> Output {
    multifield(&["run", config, "--out", dir.to_str().unwrap()])
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn list_is_sorted_and_stable() {
    let first = multifield(&["list"]);
    assert!(first.status.success());
    let text = String::from_utf8(first.stdout.clone()).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert!(names.len() >= 6);
    assert!(names.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(multifield(&["list"]).stdout, first.stdout);
}

#[test]
fn every_bundled_scenario_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let listing = String::from_utf8(multifield(&["list"]).stdout).unwrap();
    for name in listing.lines().map(|l| l.split('\t').next().unwrap()) {
        let out = run_into(name, &tmp.path().join(name));
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stdout));
        assert!(tmp.path().join(name).join("summary.json").exists());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        assert!(run_into("minimize-s2-geodesic", &tmp.path().join(run)).status.success());
    }
    let read = |run: &str, file: &str| fs::read(tmp.path().join(run).join(file)).unwrap();
    assert_eq!(read("a", "summary.json"), read("b", "summary.json"));
    assert_eq!(read("a", "geodesic-profile.csv"), read("b", "geodesic-profile.csv"));
}

#[test]
fn empty_task_list_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#"{"name": "empty", "tasks": []}"#);
    let out = run_into(&config, &tmp.path().join("out"));
    assert!(out.status.success());
    let summary = fs::read_to_string(tmp.path().join("out/summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"pass\""));
}

#[test]
fn exit_codes_separate_config_and_threshold_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), r#"{"name": "bad", "tasks": [{"kind": "minimize", "bogus": 1}]}"#);
    let out = run_into(&bad, &tmp.path().join("bad"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tasks[0]"));

    assert_eq!(multifield(&["run", "no-such-scenario"]).status.code(), Some(1));

    let strict = write_config(
        tmp.path(),
        r#"{"name": "tight", "tasks": [{"kind": "distance-demo", "demo": "cauchy", "case": "real-line",
            "expect": {"max_bound_error": {"max": 0.0}}}]}"#,
    );
    let out = run_into(&strict, &tmp.path().join("tight"));
    assert_eq!(out.status.code(), Some(2));
    let summary = fs::read_to_string(tmp.path().join("tight/summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"fail\""));
}

#[test]
fn task_errors_do_not_stop_later_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{"name": "mixed", "tasks": [
            {"id": "broken", "kind": "residual-suite", "case": "no-such-case"},
            {"id": "fine", "kind": "distance-demo", "demo": "cauchy", "case": "circle", "n_max": 4}]}"#,
    );
    let out = run_into(&config, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["tasks"][0]["status"], "error");
    assert_eq!(summary["tasks"][1]["status"], "pass");
}

#[test]
fn export_prints_series_and_lists_alternatives() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into("minimize-s2-geodesic", &tmp.path().join("min")).status.success());
    let report = tmp.path().join("min/summary.json");
    let out = multifield(&["export", report.to_str().unwrap(), "--series", "energy-history"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("iteration,energy\n"));
    let energies: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(energies.len() > 2 && energies.last() < energies.first());

    let out = multifield(&["export", report.to_str().unwrap(), "--series", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("geodesic/energy-history"));
}

#[test]
fn refinement_series_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{"name": "refine", "tasks": [{"id": "bulk", "kind": "refinement-study", "target": "bulk-smooth-el",
            "h0": 0.1, "count": 3, "expect": {"order": {"min": 1.7, "max": 2.3}}}]}"#,
    );
    assert!(run_into(&config, &tmp.path().join("out")).status.success());
    let out = multifield(&["export", tmp.path().join("out/summary.json").to_str().unwrap(), "--series", "bulk/refinement"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
