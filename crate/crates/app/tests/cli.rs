use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cbm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbm"))
        .args(args)
        .env("CBM_DATA_DIR", dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_hexagon(dir: &Path) {
    std::fs::write(dir.join("gen.json"), r#"{"points_per_cluster": 25}"#).unwrap();
    let stdout = ok(&cbm(dir, &["generate", "hexagon", "--config", "gen.json", "--out", "hex.json"]));
    assert!(stdout.starts_with("Hexagon: 150 points, 15 concepts, 6 valid combinations, min_concepts 3"), "{stdout}");
}

const FAST: &[&str] = &[
    "--preset",
    "hexagon",
    "--burn-in-steps",
    "300",
    "--samples-per-restart",
    "20",
    "--restarts",
    "4",
    "-M",
    "5",
];

#[test]
fn generate_writes_dataset_and_catalog() {
    let dir = tempfile::tempdir().unwrap();
    small_hexagon(dir.path());
    let data: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("hex.json")).unwrap()).unwrap();
    assert_eq!(data["schema_version"], 1);
    assert_eq!(data["labels"].as_array().unwrap().len(), 150);
    let cat: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("hex.catalog.json")).unwrap()).unwrap();
    assert_eq!(cat["concepts"].as_array().unwrap().len(), 15);

    let stdout = ok(&cbm(dir.path(), &["generate", "vitals", "--out", "vitals.json"]));
    assert!(stdout.starts_with("Vitals: 2252 points"), "{stdout}");
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"points_per_cluster": "lots"}"#).unwrap();
    let out = cbm(dir.path(), &["generate", "hexagon", "--config", "bad.json", "--out", "x.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("points_per_cluster"));

    small_hexagon(dir.path());
    std::fs::write(dir.path().join("cfg.json"), r#"{"hmc": {"leapfrog_steps": -3}}"#).unwrap();
    let out = cbm(dir.path(), &["pipeline", "--data", "hex.json", "--config", "cfg.json", "--out-dir", "run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hmc.leapfrog_steps"));

    let out = cbm(dir.path(), &["pipeline", "--data", "hex.json", "--k", "0", "--out-dir", "run"]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_then_stepwise_commands_agree() {
    let dir = tempfile::tempdir().unwrap();
    small_hexagon(dir.path());
    let mut args = vec!["pipeline", "--data", "hex.json", "--out-dir", "run", "--seed", "4"];
    args.extend_from_slice(FAST);
    let stdout = ok(&cbm(dir.path(), &args));
    assert!(stdout.contains("| Valid explanations found |") && stdout.contains("min_M"), "{stdout}");
    for f in ["pool.json", "proposals.json", "report.json", "report.md"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["proposals"]["member_ids"].as_array().unwrap().len() <= 5);

    // Sample, select and evaluate separately reproduce the pipeline's selection.
    let mut args = vec!["sample", "--data", "hex.json", "--out", "pool.json", "--seed", "4"];
    args.extend_from_slice(&FAST[..8]);
    ok(&cbm(dir.path(), &args));
    let a: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("pool.json")).unwrap()).unwrap();
    let b: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/pool.json")).unwrap()).unwrap();
    assert_eq!(a["archive"], b["archive"]);
    ok(&cbm(dir.path(), &["select", "--data", "hex.json", "--pool", "pool.json", "-M", "5", "--out", "props.json"]));
    let props: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("props.json")).unwrap()).unwrap();
    assert_eq!(props["set"]["member_ids"], report["proposals"]["member_ids"]);
    ok(&cbm(dir.path(), &["evaluate", "--data", "hex.json", "--proposals", "props.json", "--out", "eval.json"]));
    let eval: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["report"], report["report"]);
}

#[test]
fn pipeline_singles_and_pinned() {
    let dir = tempfile::tempdir().unwrap();
    small_hexagon(dir.path());
    let mut args = vec!["pipeline", "--data", "hex.json", "--out-dir", "singles", "--singles", "--method", "kmeans"];
    args.extend_from_slice(FAST);
    let stdout = ok(&cbm(dir.path(), &args));
    assert!(stdout.contains("| Valid concepts found |"), "{stdout}");

    let mut args = vec!["pipeline", "--data", "hex.json", "--out-dir", "pinned", "--pin-concept", "0", "--pin-column", "0"];
    args.extend_from_slice(FAST);
    let stdout = ok(&cbm(dir.path(), &args));
    assert!(stdout.contains("| Valid completions found |"), "{stdout}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("pinned/report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["eligible"], 2);
}

#[test]
fn empty_pool_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    small_hexagon(dir.path());
    let out = cbm(
        dir.path(),
        &["pipeline", "--data", "hex.json", "--out-dir", "run", "--burn-in-steps", "1", "--samples-per-restart", "2", "--restarts", "1", "--t-acc", "1.0", "--step-size", "0.0001"],
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}
