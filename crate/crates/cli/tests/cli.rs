use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn projflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_projflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth_into(dir: &Path) {
    let out = projflow(&[
        "synth",
        "--frames",
        "16",
        "--count",
        "40",
        "--rank",
        "4",
        "--seed",
        "5",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("prior.json").exists());
    assert!(dir.join("reference.json").exists());
}

fn write_config(dir: &Path, name: &str, constraints: Value) -> String {
    let cfg = json!({
        "prior": "prior.json",
        "frames": 16,
        "sampler": {"steps": 30, "seed": 1},
        "constraints": constraints,
    });
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn oracle_check_passes() {
    let out = projflow(&["oracle-check", "--seed", "7", "--trials", "20"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    for suite in ["ddnm", "map", "posterior", "optimality"] {
        assert!(stdout.contains(&format!("PASS {suite}")), "{stdout}");
    }
}

#[test]
fn missing_prior_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", json!([{"kind": "loop"}]));
    let out = projflow(&["sample", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prior.json"));
}

#[test]
fn unknown_subcommand_is_a_validation_error() {
    assert_eq!(projflow(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(projflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn end_to_end_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d);

    // inpainting with default trust parameters
    let cfg = write_config(
        d,
        "inpaint.json",
        json!([
            {"kind": "trajectory", "joint": "pelvis", "density": 5, "reference": "reference.json"},
            {"kind": "keyframes", "entries": [{"frame": 8, "joint": "left_wrist", "value": [0.3, 1.0, 0.2]}]}
        ]),
    );
    let out = projflow(&[
        "inpaint",
        "--config",
        &cfg,
        "--out",
        d.join("inpainted.json").to_str().unwrap(),
        "--report",
        d.join("inpaint_report.json").to_str().unwrap(),
        "--trace-csv",
        d.join("trace.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = report(&d.join("inpaint_report.json"));
    assert!(rep["hard_residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(rep["traj_err"].as_f64().unwrap(), 0.0);
    assert_eq!(rep["residual_series"].as_array().unwrap().len(), 30);
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,t,hard_residual,correction_rnorm\n"));
    assert_eq!(trace.lines().count(), 31);

    // lifting from the reference motion's projection
    let cfg = write_config(
        d,
        "lift.json",
        json!([{"kind": "lift", "camera": {"yaw": 30, "pitch": 15, "scale": 1.1}, "reference": "reference.json"}]),
    );
    let rep_path = d.join("lift_report.json");
    let out = projflow(&["lift", "--config", &cfg, "--report", rep_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report(&rep_path)["mpjpe_2d"].as_f64().unwrap() <= 1e-8);

    // lift without a lift constraint
    let cfg = write_config(d, "noloop.json", json!([{"kind": "loop"}]));
    assert_eq!(projflow(&["lift", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn runs_are_reproducible_and_export_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d);
    let cfg = write_config(
        d,
        "c.json",
        json!([
            {"kind": "loop"},
            {"kind": "relative", "joint_a": 20, "joint_b": 21, "offset": [0.4, 0.0, 0.0], "frames": (0..15).collect::<Vec<_>>()}
        ]),
    );
    let (a, b) = (d.join("a.json"), d.join("b.json"));
    for p in [&a, &b] {
        let out = projflow(&["sample", "--config", &cfg, "--seed", "9", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let csv = d.join("a.csv");
    let out = projflow(&[
        "export-csv",
        "--input",
        a.to_str().unwrap(),
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("j0_x,j0_y,j0_z,j1_x"));
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn redundant_hard_constraints_are_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d);
    // first/last pelvis positions pinned, plus the loop row tying them together
    let cfg = write_config(
        d,
        "c.json",
        json!([
            {"kind": "trajectory", "joint": 0, "density": 2, "reference": "reference.json"},
            {"kind": "loop"}
        ]),
    );
    let out = projflow(&["sample", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank-deficient"));
}
