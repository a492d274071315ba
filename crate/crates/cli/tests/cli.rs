use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "core", "corpus", &format!("{name}.prob")]
        .iter()
        .collect()
}

fn jacsdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jacsdp"))
        .args(args)
        .env_remove("JACSDP_SOLVER_CMD")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn solve_prints_a_certified_report() {
    let path = corpus("motzkin_ball");
    let out = jacsdp(&["solve", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema"], "jacsdp-report/1");
    assert_eq!(report["order"], 4);
    assert!(report["primal"].as_f64().unwrap().abs() < 1e-6);
    assert_eq!(report["certificate"]["fec"], true);
    assert_eq!(report["minimizers"].as_array().unwrap().len(), 1);
}

#[test]
fn report_goes_to_file_with_summary_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let path = corpus("two_quadratics");
    let out = jacsdp(&["solve", path.to_str().unwrap(), "--order", "4", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("flat extension: yes"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    assert!((report["primal"].as_f64().unwrap() + 2.618033988749895).abs() < 1e-5);
}

#[test]
fn malformed_problem_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.prob");
    std::fs::write(&bad, "vars: x y\nmin: x^2 + * y\n").unwrap();
    let out = jacsdp(&["solve", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let missing = dir.path().join("missing.prob");
    assert_eq!(code(&jacsdp(&["solve", missing.to_str().unwrap()])), 2);
}

#[test]
fn order_below_minimum_exits_3() {
    let path = corpus("motzkin_ball");
    let out = jacsdp(&["solve", path.to_str().unwrap(), "--order", "1"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimal admissible order"));
}

#[test]
fn missing_external_command_exits_3() {
    let path = corpus("motzkin_ball");
    assert_eq!(code(&jacsdp(&["solve", path.to_str().unwrap(), "--solver", "external"])), 3);
}

#[test]
fn unbounded_relaxation_exits_4() {
    let path = corpus("motzkin_exterior");
    let out = jacsdp(&["solve", path.to_str().unwrap(), "--variant", "baseline-putinar", "--order", "4"]);
    assert_eq!(code(&out), 4);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["status"], "unbounded");
}

#[test]
fn uncertified_solution_exits_5() {
    // the raw interior-point solution has full rank, so the flat extension test fails
    let path = corpus("three_quadratics");
    let out = jacsdp(&["solve", path.to_str().unwrap(), "--no-refine"]);
    assert_eq!(code(&out), 5);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["certificate"]["fec"], false);
    assert_eq!(
        code(&jacsdp(&["solve", path.to_str().unwrap(), "--no-refine", "--no-certify"])),
        0
    );
}

#[test]
fn export_writes_sdpa_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("m5.dat-s");
    let path = corpus("three_quadratics");
    let out = jacsdp(&["export", path.to_str().unwrap(), "--order", "4", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('"'));
    assert_eq!(lines.next().unwrap().trim(), "45");
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m5.dat-s.json")).unwrap()).unwrap();
    assert_eq!(sidecar["moments"].as_array().unwrap().len(), 45);
    assert_eq!(sidecar["problem"], "three_quadratics");
}

#[test]
fn compare_prints_a_markdown_table() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("table.json");
    let path = corpus("motzkin_ball");
    let out = jacsdp(&[
        "compare",
        path.to_str().unwrap(),
        "--variants",
        "jacobian-schmudgen,baseline-putinar",
        "--orders",
        "3..4",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let md = String::from_utf8_lossy(&out.stdout);
    assert!(md.contains("jacobian-schmudgen") && md.contains("baseline-putinar"));
    let table: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(table["cells"].as_array().unwrap().len(), 4);
}
