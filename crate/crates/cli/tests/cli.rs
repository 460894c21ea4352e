use std::path::{Path, PathBuf};
use std::process::Command;

use qstat_cli::{load_scenario, parse_scenario, run, RunOptions, RunReport, Status};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn qstat() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qstat"))
}

const TWO_LEVEL: &str = r#"
schema_version = 1
name = "t1-only"

[model]
kind = "two-level"

[ensemble]
kind = "canonical"
beta = [0.1, 1.0, 10.0]
lambda = [0.0, 0.7]
"#;

#[test]
fn shipped_scenarios_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = qstat().arg("validate").arg(&path).output().unwrap();
            assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn empty_task_list_exits_zero() {
    let s = parse_scenario(TWO_LEVEL).unwrap();
    let report = run(&s, &RunOptions::default()).unwrap();
    assert_eq!(report.summary.attempted, 0);
    assert!(report.all_passed());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, TWO_LEVEL).unwrap();
    let status = qstat().arg("run").arg(&path).output().unwrap().status;
    assert_eq!(status.code(), Some(0));
}

#[test]
fn table_one_passes_on_two_level() {
    let text = format!("{TWO_LEVEL}\n[[tasks]]\ntype = \"identity-suite\"\ntables = [1]\nqfdt = false\nheat_capacity = false\n");
    let report = run(&parse_scenario(&text).unwrap(), &RunOptions::default()).unwrap();
    let t1: Vec<_> = report.checks.iter().filter(|c| c.check.starts_with("T1-")).collect();
    // 6 grid points × (2 λ-instances + 2 β-instances)
    assert_eq!(t1.len(), 24);
    assert!(t1.iter().all(|c| c.passed()), "{t1:?}");
    assert!(!report.checks.iter().any(|c| c.check.starts_with("T3-")));
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let s = load_scenario(&scenarios_dir().join("master_fermionic_grand.toml")).unwrap();
    let strip = |mut r: RunReport| {
        r.wall_time_seconds = 0.0;
        r
    };
    let one = strip(run(&s, &RunOptions { fail_fast: false, threads: Some(1) }).unwrap());
    let four = strip(run(&s, &RunOptions { fail_fast: false, threads: Some(4) }).unwrap());
    assert_eq!(one, four);
    assert_eq!(one.to_json().unwrap(), four.to_json().unwrap());
}

#[test]
fn summary_counts_add_up() {
    let s = load_scenario(&scenarios_dir().join("negative_control.toml")).unwrap();
    let r = run(&s, &RunOptions::default()).unwrap();
    let sm = r.summary;
    assert_eq!(sm.attempted, r.checks.len());
    assert_eq!(sm.attempted, sm.passed + sm.failed + sm.errors);
    assert!(sm.failed > 0);
}

#[test]
fn negative_control_fails_and_exits_nonzero() {
    let path = scenarios_dir().join("negative_control.toml");
    let r = run(&load_scenario(&path).unwrap(), &RunOptions::default()).unwrap();
    // Every variance-type instance must now disagree.
    for tag in ["T2-N-MU", "T2-H-BETA", "T3-FK-ALPHA"] {
        let rows: Vec<_> = r.checks.iter().filter(|c| c.check == tag).collect();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|c| c.status == Status::Fail), "{tag}");
    }
    let status = qstat().arg("run").arg(&path).output().unwrap().status;
    assert_eq!(status.code(), Some(1));

    let out = qstat().args(["run", "--fail-fast"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, TWO_LEVEL.replace("kind = \"canonical\"", "kind = \"grand-canonical\"\nmu = [0.0]")).unwrap();
    let out = qstat().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ensemble.kind") && err.contains("number operator"), "{err}");

    let out = qstat().args(["validate", "/nonexistent/scenario.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&bad, "schema_version = 1\nname = [").unwrap();
    let out = qstat().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn reports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = qstat()
        .args(["run", "--seed", "5", "--atol", "1e-8", "-o"])
        .arg(dir.path())
        .arg(scenarios_dir().join("two_level.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let report: RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report.seed, 5);
    assert_eq!(report.summary.attempted, report.checks.len());
    assert!(!report.maxent.is_empty() && !report.dynamics.is_empty() && !report.integration.is_empty());

    let mut ids = csv::Reader::from_path(dir.path().join("identities.csv")).unwrap();
    assert_eq!(ids.records().count(), report.checks.len());
    let mut traj = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let headers = traj.headers().unwrap().clone();
    assert_eq!(&headers[3], "expectation");
    // four observables × 2000 intervals
    assert_eq!(traj.records().count(), 4 * 2000);
}

#[test]
fn list_identities_prints_every_tag() {
    let out = qstat().arg("list-identities").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for id in qstat_core::IdentityId::ALL {
        assert!(text.contains(id.tag()), "{id}");
    }
}
