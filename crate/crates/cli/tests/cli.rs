use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mapf-hd"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn solve_fixture_gives_makespan_three() {
    let out = run(bin().args(["solve", "--instance"]).arg(fixture("fixture_3x2.json")));
    assert!(out.status.success());
    let sol: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sol["makespan"], 3);
}

#[test]
fn solve_sealed_corridor_reports_failure() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("corridor.json");
    fs::write(
        &inst,
        r#"{"size_x":3,"size_y":1,"obstacles":[],"targets":[{"start":[0,0],"goal":[2,0]}],"obstructing":[[1,0]]}"#,
    )
    .unwrap();
    let out = run(bin().args(["solve", "--instance"]).arg(&inst));
    assert_eq!(out.status.code(), Some(1));
    let fail: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fail["status"], "failed");
    assert_eq!(fail["reason"], "deadlock");
}

#[test]
fn corrupted_solution_fails_validation_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let sol_path = dir.path().join("sol.json");
    let out = run(bin()
        .args(["solve", "--instance"])
        .arg(fixture("fixture_3x2.json"))
        .arg("--out")
        .arg(&sol_path));
    assert!(out.status.success());

    let ok = run(bin()
        .args(["validate", "--instance"])
        .arg(fixture("fixture_3x2.json"))
        .arg("--solution")
        .arg(&sol_path));
    assert!(ok.status.success());

    // the target jumps from (0,0) straight to (2,0) at t=1
    let mut sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sol_path).unwrap()).unwrap();
    sol["paths"][0][1] = serde_json::json!([2, 0]);
    sol["paths"][0][2] = serde_json::json!([2, 0]);
    fs::write(&sol_path, sol.to_string()).unwrap();
    let bad = run(bin()
        .args(["validate", "--instance"])
        .arg(fixture("fixture_3x2.json"))
        .arg("--solution")
        .arg(&sol_path));
    assert_eq!(bad.status.code(), Some(1));
    let text = String::from_utf8(bad.stdout).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    assert!(text.contains("illegal_step"), "{text}");
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.json"), dir.path().join("b.json")];
    for p in &paths {
        let out = run(bin()
            .args(["gen", "--env", "exp1", "--density", "0.9", "--targets", "2", "--seed", "7", "--out"])
            .arg(p));
        assert!(out.status.success());
    }
    let a = fs::read(&paths[0]).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(&paths[1]).unwrap());
}

#[test]
fn oracle_on_fixture() {
    let out = run(bin().args(["oracle", "--instance"]).arg(fixture("fixture_3x2.json")));
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "optimal 3");
}

#[test]
fn bench_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = run(bin()
        .args(["bench", "--env", "exp1", "--density", "0.0", "--density", "0.5", "--trials", "3", "--seed", "4", "--out"])
        .arg(&csv));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("density,trial,seed,success,makespan,compute_time_ms,failure_reason")
    );
    assert_eq!(lines.count(), 6);

    let out = run(bin().arg("summarize").arg(&csv));
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn bench_over_instance_directory() {
    let out = run(bin().args(["bench", "--instance"]).arg(fixture("")));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows = fs::read_dir(fixture("")).unwrap().count();
    assert_eq!(text.lines().count(), rows + 1);
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn usage_error_exits_nonzero() {
    let out = run(bin().args(["solve"]));
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
}

#[test]
fn plan_prints_the_direct_route() {
    let out = run(bin().args(["plan", "--instance"]).arg(fixture("fixture_3x2.json")));
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "[[0, 0], [1, 0], [2, 0]]");
}
