use std::fs;
use std::path::Path;

use assert_cmd::Command;

const SQUARE: &str = "\
[experiment]
name = square

[graph]
family = complete(2)

[source]
kind = power
p = 2
minorant = self

[datum]
kind = constant
value = 1

[solver]
delta = 1
horizon = 2
phi_vertex = v0
";

const HEAT: &str = "\
[experiment]
name = heat

[graph]
family = cycle(6)

[source]
kind = zero

[datum]
kind = indicator
vertices = v0
value = 1

[solver]
delta = 1
horizon = 3
";

fn graphflame() -> Command {
    Command::cargo_bin("graphflame").unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_report_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "square.ini", SQUARE);
    let out = tmp.path().join("out");
    graphflame().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).assert().success();
    for f in ["report.json", "norm_trace.csv", "reciprocal_norm.csv", "spectral_trace.csv", "phi_trace.csv", "solution.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["detection"]["kind"], "blowup");
    let t = report["detection"]["t_est"].as_f64().unwrap();
    assert!((t - 1.0).abs() < 0.02, "{t}");
}

#[test]
fn csv_output_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "heat.ini", HEAT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        graphflame().args(["run", "--config"]).arg(&cfg).arg("--out").arg(d).assert().success();
    }
    for f in ["norm_trace.csv", "solution.csv", "spectral_trace.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // no phi_vertex: omitted and noted
    assert!(!a.join("phi_trace.csv").exists());
    let report = fs::read_to_string(a.join("report.json")).unwrap();
    assert!(report.contains("no phi_vertex configured"));
}

#[test]
fn overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "heat.ini", HEAT);
    let out = tmp.path().join("o");
    graphflame()
        .args(["run", "--set", "solver.horizon=0.5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["config"].as_str().unwrap().contains("horizon=0.5"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.ini", &HEAT.replace("horizon = 3", "horizon = -3"));
    graphflame().args(["run", "--config"]).arg(&bad).assert().code(1);
    let missing = write(tmp.path(), "missing.ini", &HEAT.replace("family = cycle(6)", "file = nowhere.graph"));
    graphflame().args(["run", "--config"]).arg(&missing).arg("--out").arg(tmp.path().join("m")).assert().code(2);
    let report = fs::read_to_string(tmp.path().join("m/report.json")).unwrap();
    assert!(report.contains("\"stage\": \"ingest\""));
}

#[test]
fn manifest_runs_in_parallel() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "square.ini", SQUARE);
    write(tmp.path(), "heat.ini", HEAT);
    let manifest = write(tmp.path(), "all.txt", "square.ini\n# comment\nheat.ini\n");
    let out = tmp.path().join("out");
    graphflame().args(["run", "--jobs", "2", "--manifest"]).arg(&manifest).arg("--out").arg(&out).assert().success();
    assert!(out.join("square/report.json").exists());
    assert!(out.join("heat/report.json").exists());
}

#[test]
fn validate_and_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write(tmp.path(), "p.graph", "graph v2\nnode a 1\nnode b 1\nnode c 1\nedge a b 1\nedge b c 1\n");
    graphflame().args(["validate", "--graph"]).arg(&good).assert().success();
    let split = write(tmp.path(), "s.graph", "graph v2\nnode a 1\nnode b 1\nnode c 1\nedge a b 1\n");
    let out = graphflame().args(["validate", "--graph"]).arg(&split).assert().code(2).get_output().stdout.clone();
    assert!(String::from_utf8(out).unwrap().contains("disconnected"));

    let out = graphflame()
        .args(["spectrum", "--center", "b", "--radii", "1,2", "--graph"])
        .arg(&good)
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("R,lambda1"), "{text}");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn classify_prints_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "heat.ini", HEAT);
    let out = graphflame().args(["classify", "--config"]).arg(&cfg).assert().success().get_output().stdout.clone();
    let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert!(v["verdict"].is_string());
}
