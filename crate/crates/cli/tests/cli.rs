use std::fs;
use std::process::Command;

fn avatar() -> Command {
    Command::new(env!("CARGO_BIN_EXE_avatar"))
}

fn stdout(c: &mut Command) -> (bool, String) {
    let out = c.output().unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn sim_prints_one_record() {
    let (ok, text) = stdout(avatar().args(["sim", "--gen", "line", "--n", "16", "--N", "16", "--seed", "3"]));
    assert!(ok);
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("converged=true") && text.contains("silence_ok=true"), "{text}");
}

#[test]
fn sim_is_reproducible_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let trace = dir.path().join(format!("{name}.trace"));
        let status = avatar()
            .args(["sim", "--gen", "random-tree", "--N", "32", "--n", "20", "--seed", "7", "--out"])
            .arg(&out)
            .arg("--trace")
            .arg(&trace)
            .status()
            .unwrap();
        assert!(status.success());
        (fs::read_to_string(out).unwrap(), fs::read_to_string(trace).unwrap())
    };
    let (a, ta) = run("a");
    let (b, tb) = run("b");
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let first: serde_json::Value = serde_json::from_str(ta.lines().next().unwrap()).unwrap();
    assert_eq!(first["round"], 1);
    assert!(first["detectors"].as_u64().unwrap() >= 1);
    let last: serde_json::Value = serde_json::from_str(ta.lines().last().unwrap()).unwrap();
    assert_eq!(last["actions_applied"], 0);
}

#[test]
fn edgelist_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.txt");
    let status = avatar()
        .args(["sim", "--gen", "star", "--N", "8", "--trace-format", "edgelist-per-round", "--trace"])
        .arg(&trace)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(trace).unwrap();
    assert!(text.starts_with("1:"));
    assert!(!avatar().args(["sim", "--N", "8", "--trace-format", "gif"]).status().unwrap().success());
}

#[test]
fn build_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, text) = stdout(avatar().args(["build", "--N", "16", "--nodes", "9,1,4,12"]));
    assert!(ok);
    assert!(text.starts_with("16 4\nnodes 1 4 9 12\n"));
    assert!(text.contains("1 4 # type1"));
    let graph = dir.path().join("g.txt");
    fs::write(&graph, &text).unwrap();
    let (ok, out) = stdout(avatar().arg("check").arg("--graph").arg(&graph));
    assert!(ok, "{out}");
    assert!(out.contains("detectors=0 converged=true"));
    let broken = dir.path().join("b.txt");
    fs::write(&broken, text.lines().filter(|l| !l.starts_with("1 4")).collect::<Vec<_>>().join("\n")).unwrap();
    let (ok, out) = stdout(avatar().arg("check").arg("--graph").arg(&broken));
    assert!(!ok);
    assert!(out.contains("detector 1"));
}

#[test]
fn sweep_writes_results_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"kinds":["line","star"],"sizes":[8,16],"seeds":3}"#).unwrap();
    let out = dir.path().join("out");
    let status = avatar().arg("sweep").arg("--spec").arg(&spec).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let results = fs::read_to_string(out.join("results.txt")).unwrap();
    assert_eq!(results.lines().count(), 12);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.lines().all(|l| l.contains("failures=none")));
}

#[test]
fn sweep_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"kinds":["clique"],"sizes":[4],"seeds":1}"#).unwrap();
    let out = dir.path().join("env-out");
    let status = avatar().arg("sweep").arg("--spec").arg(&spec).env("AVATAR_OUT_DIR", &out).status().unwrap();
    assert!(status.success());
    assert!(out.join("results.txt").exists());
}

#[test]
fn bad_inputs_fail_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"kinds":["ring"],"sizes":[16],"seeds":1}"#).unwrap();
    let out = dir.path().join("out");
    let s = avatar().arg("sweep").arg("--spec").arg(&spec).arg("--out").arg(&out).status().unwrap();
    assert_eq!(s.code(), Some(2));
    assert!(!out.exists());
    fs::write(&spec, r#"{"kinds":["line"],"sizes":[16],"seeds":1}"#).unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let s = avatar().arg("sweep").arg("--spec").arg(&spec).arg("--out").arg(blocker.join("sub")).status().unwrap();
    assert_eq!(s.code(), Some(2));
    assert!(!avatar().args(["build", "--N", "8", "--nodes", "9"]).status().unwrap().success());
    assert!(!avatar().args(["sim", "--gen", "ring", "--N", "8"]).status().unwrap().success());
}
