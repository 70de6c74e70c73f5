use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnet"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = [
    "--set",
    "synth.target_volume=200000",
    "--set",
    "synth.users.count=300",
    "--set",
    "synth.seed=5",
];

fn small_world(dir: &Path) {
    let mut args = vec!["synth", "--out", "data"];
    args.extend(SMALL);
    let o = vnet(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let config = r#"{
        "inputs": {
            "flows": "data/flows.csv",
            "hierarchy": "data/hierarchy.csv",
            "poverty": "data/poverty.csv",
            "userlog": "data/userlog.csv",
            "behavior": "data/behavior.csv",
            "boundaries": "data/boundaries.geojson"
        },
        "output": "out"
    }"#;
    fs::write(dir.join("run.json"), config).unwrap();
}

#[test]
fn full_pipeline_writes_manifest_and_releases_lock() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let o = vnet(dir.path(), &["--config", "run.json", "pipeline", "--rescale"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pipeline");
    assert_eq!(manifest["config"]["rescale"], true);
    for name in ["flows", "hierarchy", "poverty", "userlog", "behavior", "boundaries"] {
        assert_eq!(manifest["inputs"][name]["sha256"].as_str().unwrap().len(), 64, "{name}");
    }
    let outputs = manifest["outputs"].as_object().unwrap();
    for name in ["model.json", "model_pic.json", "indicator_ranking.csv", "map_region.svg", "consistency.csv"] {
        assert!(outputs.contains_key(name), "{name}");
        assert!(out.join(name).is_file(), "{name}");
    }
    assert!(!out.join(".vnet.lock").exists());
    assert!(!out.join(".vnet-staging").exists());

    let ranking = fs::read_to_string(out.join("indicator_ranking.csv")).unwrap();
    let top = ranking.lines().nth(1).unwrap();
    assert!(top.starts_with("pct_initiated_conversation,-"), "{top}");
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let c = ["--config", "run.json"];
    for stage in [
        &["build-matrices"][..],
        &["normalize"],
        &["metrics"],
        &["metrics", "--level", "region", "--measure", "pagerank"],
        &["correlate"],
        &["fit", "--measure", "pagerank"],
        &["predict", "--no-clamp"],
        &["map"],
    ] {
        let args: Vec<&str> = c.iter().chain(stage).copied().collect();
        let o = vnet(dir.path(), &args);
        assert_eq!(code(&o), 0, "{stage:?}: {}", stderr(&o));
    }
    let out = dir.path().join("out");
    assert!(out.join("matrix_site_raw.csv").is_file());
    let scores = fs::read_to_string(out.join("scores_region.csv")).unwrap();
    assert!(scores.lines().skip(1).all(|l| l.contains(",pagerank,")), "metrics --measure replaced the file");
    let model: Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["clamp"], "clamp");
    assert!(out.join("map_arrondissement.geojson").is_file());
    assert!(out.join("flows_region.geojson").is_file());
}

#[test]
fn stored_model_predicts_without_fitting() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let model = Path::new(env!("CARGO_MANIFEST_DIR")).join("models/pagerank_region.json");
    let model = model.to_str().unwrap();
    let o = vnet(dir.path(), &["--config", "run.json", "--model", model, "pipeline"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let written: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/model.json")).unwrap()).unwrap();
    assert_eq!(written["h"]["slope"], -708.32);
    assert_eq!(written["a"]["intercept"], 84.58);
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    fs::remove_file(dir.path().join("data/hierarchy.csv")).unwrap();
    let o = vnet(dir.path(), &["--config", "run.json", "pipeline"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("inputs.hierarchy"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vnet(dir.path(), &["--damping", "1.2", "pipeline"]);
    assert_eq!(code(&o), 2);
    let o = vnet(dir.path(), &["--set", "no_such_field=1", "synth"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_flow_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let path = dir.path().join("data/flows.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "2013-01-01T00,S0001,S0002,-4,0";
    text = lines.join("\n");
    fs::write(&path, text).unwrap();
    let o = vnet(dir.path(), &["--config", "run.json", "pipeline"]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("line 4") && err.contains("calls"), "{err}");
}

#[test]
fn unknown_site_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let path = dir.path().join("data/flows.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "2013-01-01T00,S9999,S0002,4,0";
    fs::write(&path, lines.join("\n")).unwrap();
    let o = vnet(dir.path(), &["--config", "run.json", "build-matrices"]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("S9999"), "{err}");
}

#[test]
fn failed_run_leaves_previous_outputs() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let o = vnet(dir.path(), &["--config", "run.json", "pipeline"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let before = fs::read(dir.path().join("out/manifest.json")).unwrap();
    // Nobody can be retained at this threshold.
    let o = vnet(
        dir.path(),
        &["--config", "run.json", "--set", "localization.min_day_fraction=0.9999", "pipeline"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("localize"), "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("out/manifest.json")).unwrap(), before);
    assert!(!dir.path().join("out/.vnet.lock").exists());
}

#[test]
fn held_lock_refuses_to_run() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/.vnet.lock"), "1\n").unwrap();
    let o = vnet(dir.path(), &["--config", "run.json", "pipeline"]);
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("out/.vnet.lock").exists());
}

#[test]
fn stage_without_prior_artifacts_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let o = vnet(dir.path(), &["--config", "run.json", "metrics"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("matrix_region_raw"), "{}", stderr(&o));
}
