//! End-to-end tests of the binary: the bundled configs, config validation
//! errors, reproducibility of artifacts, and the checkpoint round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_quiverml")
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn check_on_bundled_diamond_config_passes() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "check",
        "--config",
        repo_config("diamond.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
            .unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 6);
    for c in checks {
        assert_eq!(c["pass"], true, "{}", c["name"]);
        assert!(c["tolerance"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn cyclic_quiver_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "quiver": {
        "vertices": [
          {"id": 1, "n": 1, "d": 1, "role": "input"},
          {"id": 2, "n": 1, "d": 1, "role": "output"}
        ],
        "arrows": [
          {"id": 1, "src": 1, "dst": 2},
          {"id": 2, "src": 2, "dst": 1}
        ]
      },
      "algorithm": "eout* . a1 . ein"
    }"#;
    let path = dir.path().join("cyclic.json");
    std::fs::write(&path, cfg).unwrap();
    let output = run(&["check", "--config", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("cycle"), "stderr: {err}");
    assert!(
        err.contains('1') && err.contains('2'),
        "names the cycle: {err}"
    );
}

#[test]
fn hyperbolic_preset_requires_n_at_least_d() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "quiver": {
        "vertices": [
          {"id": 1, "n": 2, "d": 2, "role": "input"},
          {"id": 2, "n": 1, "d": 2, "role": "output"}
        ],
        "arrows": [{"id": 1, "src": 1, "dst": 2}]
      },
      "algorithm": "eout* . a1 . ein",
      "signature": "hyperbolic"
    }"#;
    let path = dir.path().join("thin.json");
    std::fs::write(&path, cfg).unwrap();
    let output = run(&["check", "--config", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("n >= d"), "stderr: {err}");
}

#[test]
fn train_artifacts_reproducible_and_checkpoint_round_trips() {
    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let config = repo_config("diamond.json");
    // shorten the run through a modified copy of the config
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    cfg["train"]["steps"] = serde_json::json!(40);
    let short = dir.path().join("short.json");
    std::fs::write(&short, serde_json::to_string(&cfg).unwrap()).unwrap();

    for out in [&out1, &out2] {
        let output = run(&[
            "train",
            "--config",
            short.to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let h1 = std::fs::read(out1.path().join("history.csv")).unwrap();
    let h2 = std::fs::read(out2.path().join("history.csv")).unwrap();
    assert_eq!(h1, h2, "history must be byte-identical for the same seed");

    // checkpoint round trip is bit-exact: reload and re-serialize
    let ck1: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out1.path().join("checkpoint.json")).unwrap(),
    )
    .unwrap();
    let ck2: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out2.path().join("checkpoint.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(ck1, ck2);

    // eval on the checkpoint is deterministic
    let inputs = dir.path().join("inputs.csv");
    std::fs::write(&inputs, "0.4,-0.2\n-0.3,0.5\n").unwrap();
    let e1 = run(&[
        "eval",
        "--checkpoint",
        out1.path().join("checkpoint.json").to_str().unwrap(),
        "--inputs",
        inputs.to_str().unwrap(),
    ]);
    let e2 = run(&[
        "eval",
        "--checkpoint",
        out2.path().join("checkpoint.json").to_str().unwrap(),
        "--inputs",
        inputs.to_str().unwrap(),
    ]);
    assert!(e1.status.success());
    assert_eq!(e1.stdout, e2.stdout);

    // map emits the coordinate dump with a tiny round-trip residual
    let m = run(&[
        "map",
        "--checkpoint",
        out1.path().join("checkpoint.json").to_str().unwrap(),
        "--out",
        dir.path().join("map.json").to_str().unwrap(),
    ]);
    assert!(m.status.success());
    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("map.json")).unwrap())
            .unwrap();
    assert!(dump["round_trip_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn csv_data_source_trains() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("data.csv"),
        "0.3,0.1,0.05,0.0
-0.4,0.2,-0.1,0.04
0.1,-0.5,0.02,-0.11
",
    )
    .unwrap();
    let cfg = r#"{
      "quiver": {
        "vertices": [
          {"id": 1, "n": 2, "d": 1, "role": "input"},
          {"id": 2, "n": 2, "d": 1, "role": "output"}
        ],
        "arrows": [{"id": 1, "src": 1, "dst": 2}]
      },
      "algorithm": "eout* . a1 . ein",
      "signature": "hyperbolic",
      "real": true,
      "train": {"lr": 0.3, "steps": 30, "seed": 4},
      "data": {"csv": "data.csv"}
    }"#;
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg).unwrap();
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out.path().join("history.csv").exists());
}

#[test]
fn tolerance_scale_is_recorded() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "check",
        "--config",
        repo_config("diamond.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--tolerance-scale",
        "10",
    ]);
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["tolerance_scale"], 10.0);
    // the equivariance tolerance scales from 1e-8 to 1e-7
    let eq = &report["checks"][0];
    assert_eq!(eq["name"], "equivariance");
    assert!((eq["tolerance"].as_f64().unwrap() - 1e-7).abs() < 1e-20);
}

#[test]
fn dim_prints_moduli_dimension() {
    let output = run(&[
        "dim",
        "--config",
        repo_config("diamond.json").to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("moduli dimension: 8"), "{text}");
    assert!(text.contains("N_i"), "{text}");
}

#[test]
fn xor_config_trains_to_low_cost() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "train",
        "--config",
        repo_config("xor.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
            .unwrap();
    assert!(report["final_cost"].as_f64().unwrap() < 0.05);
}

#[test]
fn signature_override_flag_applies() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "check",
        "--config",
        repo_config("diamond.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--signature",
        "compact",
        "--seed",
        "9",
    ]);
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["signature"], "compact");
}
