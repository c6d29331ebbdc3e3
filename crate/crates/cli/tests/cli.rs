use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssd-lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("SSD_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

fn stdout_json(dir: &Path, args: &[&str]) -> serde_json::Value {
    serde_json::from_slice(&run(dir, args).stdout).expect("json output")
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(p, &["--seed", "1", "gen", "ssm", "--t", "32", "--n", "4", "--gain-lo", "0", "--out", "ssm.json"]), 0);
    assert_eq!(code(p, &["--seed", "2", "gen", "sequence", "--t", "32", "--d", "3", "--out", "x.json"]), 0);
    dir
}

#[test]
fn forward_all_paths_agree() {
    let dir = workspace();
    let out = run(dir.path(), &["forward", "--ssm", "ssm.json", "--x", "x.json", "--path", "all"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_pairwise_error"].as_f64().unwrap() <= 1e-10);
    assert_eq!(report["pass"], true);
    assert_eq!(report["ssd"].as_array().unwrap().len(), 32);
}

#[test]
fn forward_writes_y_and_reads_csv_input() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(code(p, &["--seed", "2", "gen", "sequence", "--t", "32", "--d", "3", "--format", "csv", "--out", "x.csv"]), 0);
    let from_json = stdout_json(p, &["forward", "--ssm", "ssm.json", "--x", "x.json"]);
    let from_csv = stdout_json(p, &["forward", "--ssm", "ssm.json", "--x", "x.csv"]);
    assert_eq!(from_json, from_csv);
    assert_eq!(from_json["Y"].as_array().unwrap().len(), 32);
}

#[test]
fn malformed_and_mismatched_inputs_exit_2() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), "{\"T\": 3, ").unwrap();
    assert_eq!(code(p, &["forward", "--ssm", "bad.json", "--x", "x.json"]), 2);
    assert_eq!(code(p, &["--seed", "3", "gen", "sequence", "--t", "31", "--d", "3", "--out", "x31.json"]), 0);
    let out = run(p, &["forward", "--ssm", "ssm.json", "--x", "x31.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 32, got 31"));
    assert_eq!(code(p, &["forward", "--ssm", "missing.json", "--x", "x.json"]), 2);
    assert_eq!(code(p, &["gen", "ssm", "--t", "4"]), 2, "seed is mandatory");
    assert_eq!(code(p, &["--eps", "0", "counterexample", "softmax", "--t", "3"]), 2);
}

#[test]
fn failed_commands_leave_no_output_file() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), "[1, 2").unwrap();
    assert_eq!(code(p, &["forward", "--ssm", "bad.json", "--x", "x.json", "--out", "y.json"]), 2);
    assert!(!p.join("y.json").exists());
    let leftovers: Vec<_> = std::fs::read_dir(p).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 3, "{leftovers:?}");
}

#[test]
fn corner_matrix_is_not_representable_at_width_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(p, &["gen", "corner", "--t", "5", "--out", "c.json"]), 0);
    let out = run(p, &["check-dual", "--mode", "representability", "--matrix", "c.json", "--n", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report,
        serde_json::json!({"blocks": [{"start": 1, "end": 5, "new_columns": 4}], "representable": false})
    );
    assert_eq!(code(p, &["check-dual", "--mode", "representability", "--matrix", "c.json", "--n", "4"]), 0);
}

#[test]
fn full_rank_dual_and_zero_gain_precondition() {
    let dir = workspace();
    let p = dir.path();
    // Gains near zero make the cumulative scalings too uneven.
    assert_eq!(code(p, &["check-dual", "--mode", "full-rank", "--ssm", "ssm.json"]), 3);
    let gen = ["--seed", "1", "gen", "ssm", "--t", "32", "--n", "4", "--gain-lo", "0.5", "--out", "ssm.json"];
    assert_eq!(code(p, &gen), 0);
    let report = stdout_json(p, &["check-dual", "--mode", "full-rank", "--ssm", "ssm.json", "--factors-out", "f.json"]);
    assert!(report["residual"].as_f64().unwrap() <= 1e-8);
    let factors: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("f.json")).unwrap()).unwrap();
    assert_eq!(factors, report["factors"]);

    let mut ssm: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("ssm.json")).unwrap()).unwrap();
    ssm["A_diag"][5][2] = serde_json::json!(0.0);
    std::fs::write(p.join("zero.json"), ssm.to_string()).unwrap();
    assert_eq!(code(p, &["check-dual", "--mode", "full-rank", "--ssm", "zero.json"]), 3);
    assert_eq!(code(p, &["check-dual", "--mode", "scalar-identity", "--ssm", "ssm.json"]), 3);
}

#[test]
fn extract_one_ss_with_one_state() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let rows = "1,0,0,0\n0.5,1,0,0\n1,2,1,0\n-0.5,-1,-0.5,-1\n";
    std::fs::write(p.join("m.csv"), rows).unwrap();
    let out = run(p, &["extract", "--matrix", "m.csv", "--n", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["residual"].as_f64().unwrap() <= 1e-12);
    assert_eq!(report["representation"]["r"], serde_json::json!([1, 1, 1, 1]));
    assert_eq!(code(p, &["extract", "--matrix", "m.csv", "--n", "1", "--format", "csv"]), 2);
}

#[test]
fn counterexamples_report_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let report = stdout_json(p, &["counterexample", "softmax", "--t", "4"]);
    assert_eq!(report["verdict"], true);
    assert_eq!(code(p, &["counterexample", "softmax", "--t", "9"]), 2);
    assert_eq!(code(p, &["counterexample", "non-dualizable", "--t", "5", "--n", "2"]), 0);
    assert_eq!(code(p, &["counterexample", "non-dualizable", "--t", "5", "--n", "4"]), 3);
    let table = String::from_utf8(run(p, &["counterexample", "softmax", "--t", "3", "--format", "pretty"]).stdout).unwrap();
    assert!(table.contains("verdict: PASS"));
}

#[test]
fn bench_writes_slopes_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["--seed", "0", "bench", "--path", "ssd", "--grid", "T=64,128,256", "--table", "t.csv"];
    let report = stdout_json(p, &args);
    assert_eq!(report["pass"], true);
    let slope = report["slopes"][0]["slope"].as_f64().unwrap();
    assert!((slope - 1.0).abs() <= 0.05);
    let table = std::fs::read_to_string(p.join("t.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("path,T,N,d,"));
    assert_eq!(code(p, &["--seed", "0", "bench", "--grid", "T=64,128"]), 2);
    assert_eq!(code(p, &["bench", "--grid", "T=64,128,256"]), 2, "seed is mandatory");
}

#[test]
fn parallel_probe_respects_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ssd-lab"))
        .args(["--seed", "0", "bench", "--probe-workers", "8", "--t", "64"])
        .env("SSD_LAB_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["workers"], 2);
    assert_eq!(report["bitwise_equal"], true);
    assert!(report.get("speedup").is_none());
    assert_eq!(code(dir.path(), &["--seed", "0", "bench", "--probe-workers", "9"]), 2);
}
