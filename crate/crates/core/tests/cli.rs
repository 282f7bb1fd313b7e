use std::fs;
use std::path::Path;
use std::process::Command;

use nodal_core::cli::{parse_config, RunConfig};

fn nodal(dir: &Path, config: &str) -> (i32, String, String) {
    let cfg = dir.join("config_in.json");
    fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nodal"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn spectrum_writes_eigenvalues() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = nodal(tmp.path(), r#"{"command":"spectrum","dim":1,"lengths":[3.141592653589793],"sizes":[200],"K":5}"#);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(tmp.path().join("out/spectrum.csv")).unwrap();
    let mut rows = csv.lines();
    rows.next();
    let values: Vec<f64> = rows
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 5);
    for (j, v) in values.iter().enumerate() {
        let exact = ((j + 1) * (j + 1)) as f64;
        assert!((v - exact).abs() / exact < 1e-3, "eigenvalue {} = {v}", j + 1);
    }
}

#[test]
fn zero_coupling_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = nodal(tmp.path(), r#"{"command":"solve","beta":[[0,0]]}"#);
    assert_eq!(code, 1);
    assert!(err.contains("coupling must be nonzero"), "{err}");
}

#[test]
fn malformed_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, _) = nodal(tmp.path(), r#"{"command":"spectrum","sizes":"many"}"#);
    assert_eq!(code, 1);
}

#[test]
fn infeasible_solve_exits_two_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, out, _) = nodal(tmp.path(), r#"{"command":"solve","masses":[10,10]}"#);
    assert_eq!(code, 2);
    assert!(out.contains("infeasible"));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/feasibility.json")).unwrap()).unwrap();
    assert_eq!(rep["feasible"], serde_json::Value::Bool(false));
    assert!(!tmp.path().join("out/solve_report.json").exists());
}

#[test]
fn solve_outputs_are_reproducible() {
    let config = r#"{"command":"solve","k":1,"sizes":[100],"samples":300,"seed":7}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(nodal(a.path(), config).0, 0);
    assert_eq!(nodal(b.path(), config).0, 0);
    for name in ["solve_report.json", "run_log.csv", "feasibility.json"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn bracket_outputs_are_reproducible() {
    let config = r#"{"command":"bracket","k":1,"sizes":[100],"samples":400,"seed":3}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(nodal(a.path(), config).0, 0);
    assert_eq!(nodal(b.path(), config).0, 0);
    let x = fs::read(a.path().join("out/bracket.csv")).unwrap();
    let y = fs::read(b.path().join("out/bracket.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn effective_config_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, _) = nodal(tmp.path(), r#"{"command":"feasibility","k":2,"sizes":[120]}"#);
    assert_eq!(code, 0);
    let echoed = fs::read_to_string(tmp.path().join("out/config.json")).unwrap();
    let cfg = parse_config(&echoed).unwrap();
    let expected = RunConfig {
        command: nodal_core::cli::Command::Feasibility,
        k: 2,
        sizes: vec![120],
        out: tmp.path().join("out").to_string_lossy().into_owned(),
        ..Default::default()
    };
    assert_eq!(cfg, expected);
}

#[test]
fn semi_trivial_sweep_runs_from_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"{"command":"sweep","sizes":[100],"mu":[1,1,1],
        "beta":[[0,0.1,0.1],[0.1,0,0.1],[0.1,0.1,0]],"masses":[1e-3,1e-3,1e-3],
        "active":[0,1],"radii":[1e-2,1e-3]}"#;
    let (code, _, err) = nodal(tmp.path(), config);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
