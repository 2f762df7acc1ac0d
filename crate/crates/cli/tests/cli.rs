//! The `lgs` binary end to end: exit codes, files written, summaries.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lgs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgs")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    p.to_string_lossy().into_owned()
}

#[test]
fn nominal_outgoing_holds() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", &scenario("nominal_outgoing.toml"), "--trace", "out.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("dcge stamped, R11bis holds"), "{}", stdout(&o));
    assert!(dir.path().join("out.jsonl").exists());
}

#[test]
fn inversion_completes_two_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", &scenario("inversion.toml")]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.matches(" holds").count(), 2, "{out}");
    assert!(out.contains("aborted by a handle inversion"));
    assert!(dir.path().join("inversion.trace.jsonl").exists());
}

#[test]
fn every_shipped_scenario_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let root: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios"].iter().collect();
    let mut n = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let o = lgs(dir.path(), &["simulate", "--scenario", path.to_str().unwrap(), "--trace", "t.jsonl"]);
        assert_eq!(o.status.code(), Some(0), "{}: {}{}", path.display(), stdout(&o), stderr(&o));
        let c = lgs(dir.path(), &["check", "--trace", "t.jsonl"]);
        assert_eq!(c.status.code(), Some(0), "{}: {}", path.display(), stdout(&c));
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn double_fault_reports_the_anomaly() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", &scenario("double_fault.toml")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("anomaly latched"));
}

#[test]
fn malformed_scenario_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "schema = 1\nname = \"x\"\n[[script]]\ncycle = \"soon\"\naction = \"handle_up\"\n",
    )
    .unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    fs::write(dir.path().join("unknown.toml"), "schema = 1\nname = \"x\"\nspeed = 3\n").unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", "unknown.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("speed"), "{}", stderr(&o));

    let o = lgs(dir.path(), &["simulate", "--scenario", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scripted_noop_handle_move_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("noop.toml"), "schema = 1\nname = \"x\"\n[[script]]\naction = \"handle_down\"\n")
        .unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", "noop.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("nominal_retraction.toml");
    for (seed, out) in [("5", "a.jsonl"), ("5", "b.jsonl"), ("6", "c.jsonl")] {
        let o = lgs(dir.path(), &["simulate", "--scenario", &sc, "--seed", seed, "--trace", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    let header: Value =
        serde_json::from_str(String::from_utf8(read("c.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["seed"], 6);
}

#[test]
fn step_budget_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", &scenario("nominal_outgoing.toml"), "--steps", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("10 steps, stopped: StepBudgetExceeded"), "{}", stdout(&o));
    assert!(stdout(&o).contains("incomplete"));
}

#[test]
fn mutants_need_the_flag_and_watermark_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("nominal_outgoing.toml")).unwrap();
    fs::write(dir.path().join("m.toml"), format!("{text}\n[config]\nmutant = \"drop-door-guard\"\n")).unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", "m.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--mutant"));

    let o = lgs(dir.path(), &["simulate", "--scenario", "m.toml", "--mutant", "drop-door-guard", "--trace", "m.jsonl"]);
    assert!(stdout(&o).starts_with("MUTANT drop-door-guard"));
    let trace = fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
    assert!(trace.lines().next().unwrap().contains("\"watermark\":\"MUTANT drop-door-guard: not nominal evidence\""));
}

#[test]
fn explore_mutant_reports_r31() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgs(dir.path(), &["explore", "--mutant", "drop-door-guard", "--report", "r.json", "--traces", "cex"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "violation");
    assert!(report["watermark"].as_str().unwrap().starts_with("MUTANT"));
    let reqs: Vec<&str> =
        report["minimized"].as_array().unwrap().iter().map(|c| c["requirement"].as_str().unwrap()).collect();
    assert_eq!(reqs, ["R31"]);
    let c = lgs(dir.path(), &["check", "--trace", "cex/counterexample-R31.trace.jsonl"]);
    assert_eq!(c.status.code(), Some(1));
    assert!(stdout(&c).contains("VIOLATION R31"));
}

#[test]
fn explore_nominal_cases() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgs(dir.path(), &["explore", "--pilot-budget", "0", "--faults", "none"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("frontier exhausted"));
    let o = lgs(dir.path(), &["explore", "--depth", "0", "--report", "d.json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("1 states"), "{}", stdout(&o));
    let o = lgs(dir.path(), &["explore"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\nfrontier exhausted\n"));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("explore-report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "ok");
}

#[test]
fn explore_flag_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["explore", "--faults", "door_open/4/LD/StuckWrong"][..],
        &["explore", "--mutant", "nonsense"],
        &["explore", "--silent-module", "3"],
        &["explore", "--faults", "handle/1/StuckWrong", "--f-max", "2"],
    ] {
        let o = lgs(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn check_detects_tampering_and_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgs(dir.path(), &["simulate", "--scenario", &scenario("nominal_outgoing.toml"), "--trace", "t.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    let tampered = text.replacen("\"event\":\"doors_move\"", "\"event\":\"gears_move\"", 1);
    assert_ne!(tampered, text);
    fs::write(dir.path().join("x.jsonl"), tampered).unwrap();
    let c = lgs(dir.path(), &["check", "--trace", "x.jsonl"]);
    assert_eq!(c.status.code(), Some(1));
    assert!(stdout(&c).contains("REPLAY FAILED"));

    fs::write(dir.path().join("g.jsonl"), "hello\n").unwrap();
    assert_eq!(lgs(dir.path(), &["check", "--trace", "g.jsonl"]).status.code(), Some(2));
}
