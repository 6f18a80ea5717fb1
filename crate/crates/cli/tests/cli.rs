use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn lexispray(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lexispray")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_prints_dof_and_reach() {
    let out = lexispray(&["check", path(&scenarios().join("demo_chain.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dof: 6"), "{text}");
    assert!(text.contains("reach: "));
}

#[test]
fn spray_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let out = lexispray(&["spray", path(&scenarios().join("spray_slow.json")), "--out", path(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,q0,q1,q2,q3,q4,q5,qd0,"));
    assert_eq!(text.lines().count(), 1002);

    let json = dir.path().join("trace.json");
    let out = lexispray(&[
        "spray",
        path(&scenarios().join("spray_slow.json")),
        "--format",
        "json",
        "--out",
        path(&json),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1001);
}

#[test]
fn debug_qp_dumps_each_step() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = std::fs::read_to_string(scenarios().join("spray_slow.json"))
        .unwrap()
        .replace("\"duration\": 10.0", "\"duration\": 0.03");
    let scenario = scenario.replace("\"chain_file\": \"demo_chain.json\"", &format!("\"chain_file\": {:?}", path(&scenarios().join("demo_chain.json"))));
    let velocity = "\"velocity_profile\": [[0.0, 0, 0, 0.1]],";
    let start = scenario.find("\"velocity_profile\"").unwrap();
    let end = start + scenario[start..].find("],\n  \"desired_axis\"").unwrap() + 3;
    let scenario = format!("{}{velocity}{}", &scenario[..start], &scenario[end..]);
    let file = dir.path().join("short.json");
    std::fs::write(&file, scenario).unwrap();

    let qp_dir = dir.path().join("qp");
    let out = lexispray(&["spray", path(&file), "--debug-qp", path(&qp_dir), "--out", path(&dir.path().join("t.csv"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&qp_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["step_00000.json", "step_00001.json", "step_00002.json", "step_00003.json"]);
    let records: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(qp_dir.join("step_00001.json")).unwrap()).unwrap();
    let records = records.as_array().unwrap();
    assert!(records.iter().all(|r| r["step"] == 1));
    assert!(records.iter().any(|r| r["level"] == 3));
}

#[test]
fn ik_csv_is_reproducible_and_seedable() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("ik_random_batch.json");
    let run = |name: &str, seed: &str| {
        let file = dir.path().join(name);
        let out = lexispray(&["ik", path(&scenario), "--seed", seed, "--out", path(&file)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(&file).unwrap()
    };
    let a = run("a.csv", "3");
    assert_eq!(a, run("b.csv", "3"));
    assert_ne!(a, run("c.csv", "4"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("kind,index,attempts,termination,"));
    assert_eq!(text.lines().filter(|l| l.starts_with("batch,")).count(), 100);
}

#[test]
fn ik_json_mirrors_the_report() {
    let out = lexispray(&["ik", path(&scenarios().join("ik_example_1.json")), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let report = &v["guesses"][0]["report"];
    for key in ["q_final", "per_task_error", "iterations", "termination", "wall_time", "polished"] {
        assert!(!report[key].is_null(), "missing {key}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Validation: wrong mode for the subcommand.
    let out = lexispray(&["spray", path(&scenarios().join("ik_example_1.json"))]);
    assert_eq!(out.status.code(), Some(1));
    // Validation: malformed file, reported with its line.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"mode\": \"spraying\"\n}").unwrap();
    let out = lexispray(&["spray", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json:2:"));
    // Solver failure: a one-step height row the arm cannot honour.
    let text = std::fs::read_to_string(scenarios().join("spray_slow_height.json"))
        .unwrap()
        .replace(", \"horizon\": 0.5", "")
        .replace("\"demo_chain.json\"", &format!("{:?}", path(&scenarios().join("demo_chain.json"))));
    let tight = dir.path().join("tight.json");
    std::fs::write(&tight, text).unwrap();
    let trace = dir.path().join("tight.csv");
    let out = lexispray(&["spray", path(&tight), "--out", path(&trace)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 1);
    // I/O: missing input and unwritable output.
    assert_eq!(lexispray(&["check", path(&dir.path().join("none.json"))]).status.code(), Some(3));
    let out = lexispray(&[
        "spray",
        path(&scenarios().join("spray_slow.json")),
        "--out",
        path(&dir.path().join("no/such/dir.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
