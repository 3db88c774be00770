//! Scenario serialization, artifact layout, and CLI exit codes.

use cbf_filter::bundled::{bundled_scenario, BUNDLED_NAMES};
use cbf_filter::scenario::{load_scenario, run_scenario, Scenario};
use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbf-filter"))
}

#[test]
fn bundled_scenarios_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for name in BUNDLED_NAMES {
        let scenario = bundled_scenario(name).unwrap();
        let path = dir.path().join(format!("{name}.json"));
        fs::write(&path, scenario.to_json().unwrap()).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(scenario, back, "file round trip changed {name}");
        back.instance().unwrap();
    }
}

#[test]
fn run_writes_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let scenario_path = dir.path().join("convex-bounded.json");
    fs::write(
        &scenario_path,
        bundled_scenario("convex-bounded").unwrap().to_json().unwrap(),
    )
    .unwrap();
    let report = run_scenario(&scenario_path, &out).unwrap();

    for file in ["trajectories.csv", "equilibria.json", "phase.svg", "report.json"] {
        assert!(out.join(file).is_file(), "missing {file}");
        assert!(
            report.manifest.iter().any(|m| m == file),
            "{file} not in manifest"
        );
    }

    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert!(!csv.contains('\r'), "CSV must use LF line endings");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,h,eta,u_norm");
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6);
        for f in fields {
            let v: f64 = f.parse().expect("numeric CSV field");
            assert!(v.is_finite());
        }
    }

    let svg = fs::read_to_string(out.join("phase.svg")).unwrap();
    let count = |needle: &str| svg.matches(needle).count();
    assert_eq!(count("class=\"boundary\""), 1);
    assert_eq!(count("class=\"trajectory\""), report.trajectories.len());
    assert_eq!(count("class=\"equilibrium"), report.equilibria.len());

    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(parsed["name"], "convex-bounded");
    let eq: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("equilibria.json")).unwrap()).unwrap();
    assert_eq!(
        eq["records"].as_array().unwrap().len(),
        report.equilibria.len()
    );
}

#[test]
fn csv_states_are_reproducible_from_the_text() {
    // 17 significant digits must survive a parse/format round trip.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let scenario_path = dir.path().join("s.json");
    fs::write(
        &scenario_path,
        bundled_scenario("convex-bounded").unwrap().to_json().unwrap(),
    )
    .unwrap();
    run_scenario(&scenario_path, &out).unwrap();
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    for line in csv.lines().skip(1).take(500) {
        for field in line.split(',') {
            let v: f64 = field.parse().unwrap();
            let back: f64 = cbf_filter::scenario::fmt17(v).parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "lossy field {field}");
        }
    }
}

#[test]
fn cli_verify_passes_on_every_bundled_scenario() {
    for name in ["convex-bounded", "continuum", "halfplane-unbounded"] {
        let status = bin().args(["verify", name]).status().unwrap();
        assert_eq!(status.code(), Some(0), "verify {name}");
    }
}

#[test]
fn cli_verify_fails_with_code_1_on_a_wrong_expectation() {
    let scenario = bundled_scenario("convex-bounded").unwrap();
    let mut value: serde_json::Value =
        serde_json::from_str(&scenario.to_json().unwrap()).unwrap();
    value["expectations"]["equilibria"][0]["x"][0] = serde_json::json!(9.75);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tampered.json");
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    Scenario::from_json(&fs::read_to_string(&path).unwrap()).unwrap();

    let status = bin().args(["verify", path.to_str().unwrap()]).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn cli_rejects_bad_input_with_code_2() {
    let status = bin().args(["verify", "no-such-scenario"]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{ not json").unwrap();
    let status = bin()
        .args(["equilibria", path.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn cli_list_and_export_bundled() {
    let output = bin().arg("list-bundled").output().unwrap();
    assert!(output.status.success());
    let listing = String::from_utf8(output.stdout).unwrap();
    for name in BUNDLED_NAMES {
        assert!(listing.contains(name), "{name} missing from listing");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exported.json");
    let status = bin()
        .args(["export-bundled", "limit-cycle-3d", path.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let exported = load_scenario(Path::new(&path)).unwrap();
    assert_eq!(exported, bundled_scenario("limit-cycle-3d").unwrap());
}

#[test]
fn cli_run_honors_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("artifacts");
    let status = bin()
        .args([
            "run",
            "halfplane-unbounded",
            "--out",
            out.to_str().unwrap(),
            "--horizon",
            "10",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("report.json").is_file());
    assert!(out.join("trajectories.csv").is_file());
}
