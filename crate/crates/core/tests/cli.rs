//! End-to-end tests of the command-line interface: exit codes, output
//! files, and the shipped scenario fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrf-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn run_one_mass_trajectories_approach_the_masses() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "run",
        "--scenario",
        scenario_path("one_mass.scn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let body = std::fs::read_to_string(dir.path().join("one_mass_trajectories.csv")).unwrap();
    let mut lines = body.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t_s,branch,x1_m,v1_mps,phase_rad,weight"
    );
    // Per branch: position decreases monotonically toward the branch mass.
    let mut last = [f64::INFINITY; 2];
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let branch: usize = f[1].parse().unwrap();
        let x: f64 = f[2].parse().unwrap();
        assert!(x <= last[branch] + 1e-18);
        last[branch] = x;
        rows += 1;
    }
    assert!(
        rows >= 2000,
        "expected both branches sampled, got {rows} rows"
    );
    // Probe remains between the mass positions and its start.
    assert!(last[0] < 2.0e-5 && last[0] > 1.0e-5);
    assert!(last[1] < 2.0e-5 && last[1] > 1.2e-5);
}

#[test]
fn compare_midpoint_compare_reports_the_entanglement_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "compare",
        "--scenario",
        scenario_path("midpoint_compare.scn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("covariant: entangled = true"));
    assert!(stdout.contains("semiclassical: entangled = false"));
    assert!(stdout.contains("collapse: entangled = false"));

    let body = std::fs::read_to_string(dir.path().join("midpoint_compare_predictions.csv")).unwrap();
    for model in ["covariant", "semiclassical", "collapse"] {
        assert!(
            body.lines().any(|l| l.starts_with(model)),
            "missing {model}"
        );
    }
    let violation = std::fs::read_to_string(dir.path().join("midpoint_compare_violation.csv")).unwrap();
    assert!(violation.lines().count() == 4);
}

#[test]
fn grid_run_emits_wavefunctions_and_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "run",
        "--scenario",
        scenario_path("grid_one_mass.scn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cov =
        std::fs::read_to_string(dir.path().join("grid_one_mass_grid_covariance.csv")).unwrap();
    let max_line = cov.lines().last().unwrap();
    let max_l2: f64 = max_line.strip_prefix("max,").unwrap().parse().unwrap();
    assert!(max_l2 < 1e-8, "grid covariance distance {max_l2:e}");

    let grid = std::fs::read_to_string(dir.path().join("grid_one_mass_grid_final.csv")).unwrap();
    // Header plus 512 points for each of the two branches.
    assert_eq!(grid.lines().count(), 1 + 2 * 512);
}

#[test]
fn strict_mode_gates_on_validity() {
    // Move the reference close to the mass so tracking fails, then demand
    // strict gating: exit code 2 and no trajectory file.
    let text = std::fs::read_to_string(scenario_path("clock.scn")).unwrap();
    let close = text
        .replace("M = \"1.00005 m\"", "M = \"1.0e-4 m\"")
        .replace("M = \"1.000055 m\"", "M = \"1.05e-4 m\"")
        .replace("C = \"1.0 m\"", "C = \"5.0e-5 m\"");
    let dir = tempfile::tempdir().unwrap();
    let bad_path = dir.path().join("close.scn");
    std::fs::write(&bad_path, close).unwrap();

    let out = run_cli(&[
        "clock",
        "--scenario",
        bad_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--strict",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("clock_validity.csv").exists());
    assert!(!dir.path().join("clock_clock_report.csv").exists());

    // Without --strict the pipeline continues.
    let out = run_cli(&[
        "clock",
        "--scenario",
        bad_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("clock_clock_report.csv").exists());
}

#[test]
fn parse_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, "dimension = 1\nbogus = true\n").unwrap();
    let out = run_cli(&[
        "run",
        "--scenario",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error"), "stderr: {err}");
}

#[test]
fn validate_subcommand_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "validate",
        "--scenario",
        scenario_path("clock.scn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let body = std::fs::read_to_string(dir.path().join("clock_validity.csv")).unwrap();
    assert!(body.contains("all_conditions,pass"));
}

#[test]
fn dt_override_changes_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "run",
        "--scenario",
        scenario_path("one_mass.scn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--dt",
        "0.01",
    ]);
    assert!(out.status.success());
    let body = std::fs::read_to_string(dir.path().join("one_mass_trajectories.csv")).unwrap();
    // 100 steps + initial sample, two branches, plus header.
    assert_eq!(body.lines().count(), 1 + 2 * 101);
}

#[test]
fn tagged_scenario_routes_through_the_ancilla_maps() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "transform",
        "--scenario",
        scenario_path("ancilla_two_mass.scn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let body =
        std::fs::read_to_string(dir.path().join("ancilla_two_mass_state_transformed.csv"))
            .unwrap();
    // Branch 1's masses land on branch 0's configuration: M1 at (4, 0).
    let m1_row = body
        .lines()
        .find(|l| l.starts_with("1,M1,"))
        .expect("branch 1 M1 row");
    let fields: Vec<&str> = m1_row.split(',').collect();
    let x: f64 = fields[5].parse().unwrap();
    let y: f64 = fields[6].parse().unwrap();
    assert!((x - 4.0).abs() < 1e-10 && y.abs() < 1e-10, "{m1_row}");

    // The run pipeline evolves and maps back: the probe must end displaced
    // from its start, branch-dependently.
    let out = run_cli(&[
        "run",
        "--scenario",
        scenario_path("ancilla_two_mass.scn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let final_state =
        std::fs::read_to_string(dir.path().join("ancilla_two_mass_state_final.csv")).unwrap();
    let probe_rows: Vec<&str> = final_state
        .lines()
        .filter(|l| l.split(',').nth(1) == Some("S"))
        .collect();
    assert_eq!(probe_rows.len(), 2);
    // Positions differ across branches after the inverse maps (the probe
    // fell toward each branch's own mass configuration).
    assert_ne!(probe_rows[0].split(',').nth(5), probe_rows[1].split(',').nth(5));
}

#[test]
fn every_shipped_fixture_parses_and_round_trips() {
    use qrf_sim::scenario::parse_scenario;
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("scn") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let (scenario, warnings) = parse_scenario(&text)
            .unwrap_or_else(|e| panic!("{} failed to parse: {e}", path.display()));
        assert!(warnings.is_empty(), "{}: {warnings:?}", path.display());
        let (reparsed, rewarnings) = parse_scenario(&scenario.to_text())
            .unwrap_or_else(|e| panic!("{} failed to reparse: {e}", path.display()));
        assert!(rewarnings.is_empty());
        assert_eq!(scenario, reparsed, "{} round trip", path.display());
        scenario.initial_state().unwrap();
        seen += 1;
    }
    assert_eq!(seen, 6, "expected six shipped fixtures");
}
