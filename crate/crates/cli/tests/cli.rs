use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use featrange_core::haslac::{parse_haslac, HaslacSource};
use featrange_core::trace::read_trace_json;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).to_string_lossy().into_owned()
}

fn core_data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name).to_string_lossy().into_owned()
}

fn run(args: &[&str], ws: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featrange"))
        .args(args)
        .arg("--workspace")
        .arg(ws)
        .env_remove("FEATRANGE_CONFIG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

// timing lines aside, two runs on the same inputs print the same report
fn strip_timing(s: &str) -> String {
    s.lines().filter(|l| !l.starts_with("time:") && !l.contains("\"elapsed_s\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn evaluate_report_is_reproducible() {
    let ws = tempfile::tempdir().unwrap();
    let args = ["evaluate", "--model", &data("ramp_point.ha"), "--feature", &data("cross.fia"), "--step", "1e-2", "--horizon", "3"];
    let a = run(&args, ws.path());
    let b = run(&args, ws.path());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(strip_timing(&stdout(&a)), strip_timing(&stdout(&b)));
    let dir = stderr(&a).lines().find_map(|l| l.strip_prefix("run directory: ")).map(PathBuf::from).unwrap();
    for f in ["report.txt", "report.json", "reach.csv"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn unsatisfiable_feature_reports_empty_range() {
    let ws = tempfile::tempdir().unwrap();
    let fe = ws.path().join("far.fia");
    std::fs::write(&fe, "feature far(); begin var tc; @+(x>=100), tc=$time |-> far = tc; end\n").unwrap();
    let o = run(&["evaluate", "--model", &data("ramp_point.ha"), "--feature", fe.to_str().unwrap(), "--step", "1e-2", "--horizon", "3"], ws.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("empty range"), "{}", stdout(&o));
}

#[test]
fn missing_binding_is_an_input_error() {
    let ws = tempfile::tempdir().unwrap();
    let o = run(&["evaluate", "--model", &data("buck.ha"), "--feature", &data("settling.fia"), "--bind", "Vr=12"], ws.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing binding for formal `E`"), "{}", stderr(&o));
}

#[test]
fn bad_inputs_exit_one() {
    let ws = tempfile::tempdir().unwrap();
    let o = run(&["evaluate", "--model", "/nonexistent.ha", "--feature", &data("cross.fia")], ws.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["evaluate", "--bogus"], ws.path());
    assert_eq!(o.status.code(), Some(1));
    let bad = ws.path().join("bad.fia");
    std::fs::write(&bad, "feature broken(; begin end").unwrap();
    let o = run(&["evaluate", "--model", &data("ramp_point.ha"), "--feature", bad.to_str().unwrap()], ws.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("feature parser"), "{}", stderr(&o));
}

#[test]
fn config_from_environment() {
    let ws = tempfile::tempdir().unwrap();
    let cfg = ws.path().join("featrange.cfg");
    std::fs::write(&cfg, "step = 0.01\nhorizon = 3\nsolver = /definitely/not/here\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_featrange"))
        .args(["refine", "--model", &data("ramp_set.ha"), "--feature", &data("cross.fia"), "--oracle", "external"])
        .arg("--workspace")
        .arg(ws.path())
        .env("FEATRANGE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_featrange"))
        .args(["evaluate", "--model", &data("ramp_point.ha"), "--feature", &data("cross.fia")])
        .env("FEATRANGE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("featrange.cfg:1") && stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}

#[test]
fn import_writes_parseable_model() {
    let ws = tempfile::tempdir().unwrap();
    let out = ws.path().join("tank.ha");
    let o = run(&["import", &core_data("tank.xml"), "-o", out.to_str().unwrap()], ws.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), out.to_str().unwrap());
    let text = std::fs::read_to_string(&out).unwrap();
    parse_haslac(&HaslacSource::memory(text)).unwrap();
}

#[test]
fn trace_strip_and_csv() {
    let ws = tempfile::tempdir().unwrap();
    let out = ws.path().join("t.json");
    let o = run(&["trace", "strip", &core_data("ramp_solver_trace.json"), "--solver-format", "-o", out.to_str().unwrap()], ws.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let tr = read_trace_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(tr.steps.len(), 2);
    assert!(tr.steps.iter().all(|s| !s.null));
    let o = run(&["trace", "csv", out.to_str().unwrap()], ws.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert!(csv.lines().count() > 2, "{csv}");
}
