use std::fs;
use std::path::Path;
use std::process::Command;

fn eqm(args: &[&str], root: &Path) -> (i32, String, String) {
    let out =
        Command::new(env!("CARGO_BIN_EXE_eqm")).args(args).env("EQM_OUTPUT_ROOT", root).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn selftest_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, _) = eqm(&["selftest"], tmp.path());
    assert_eq!(code, 0, "{stdout}");
    assert!(!stdout.contains("FAIL"));
    assert!(tmp.path().join("selftest/manifest.json").is_file());
}

#[test]
fn dirac_scenario_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("dirac.json");
    fs::write(
        &file,
        r#"{"kind": "equilibrium", "seed": 9, "equilibrium": {
            "grid": {"type": "nodes", "lower": [-2.0], "upper": [2.0], "shape": [101]},
            "reference": {"type": "dirac", "point": [0.0]}}}"#,
    )
    .unwrap();
    let (code, _, stderr) = eqm(&["run", file.to_str().unwrap()], tmp.path());
    assert_eq!(code, 0, "{stderr}");
    let dir = tmp.path().join("dirac");
    for f in ["weights.csv", "el_report.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let (code, stdout, _) = eqm(&["compare", dir.to_str().unwrap(), dir.to_str().unwrap()], tmp.path());
    assert_eq!(code, 0);
    assert!(stdout.contains("\"flagged\": false"));
}

#[test]
fn malformed_config_exits_one_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.json");
    fs::write(&file, r#"{"kind": "gas", "gas": {"n": 8, "temperature": 1.0}}"#).unwrap();
    let (code, _, stderr) = eqm(&["run", file.to_str().unwrap()], tmp.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("temperature"), "{stderr}");
}

#[test]
fn failed_diagnostics_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("gas.json");
    // a KS threshold of zero cannot be met
    fs::write(&file, r#"{"kind": "gas", "gas": {"n": 8, "steps": 1500, "burn_in": 100, "ks_threshold": 0.0}}"#)
        .unwrap();
    let (code, stdout, stderr) = eqm(&["run", file.to_str().unwrap()], tmp.path());
    assert_eq!(code, 2, "{stdout}{stderr}");
    assert!(stdout.contains("FAIL ks"));
}

#[test]
fn compare_without_manifest_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, stderr) = eqm(&["compare", tmp.path().to_str().unwrap(), tmp.path().to_str().unwrap()], tmp.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("manifest"), "{stderr}");
}
