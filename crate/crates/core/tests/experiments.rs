use std::path::{Path, PathBuf};

use objattn::artifact::{from_json_str, to_json_string};
use objattn::experiments::{run_experiment, ExperimentReport, ExperimentSpec};
use objattn::{load_artifact, save_artifact, Error};
use serde_json::{json, Value};

fn specs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

fn spec_value(name: &str) -> Value {
    let text = std::fs::read_to_string(specs_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn parse(v: &Value) -> objattn::Result<ExperimentSpec> {
    from_json_str(&v.to_string(), Path::new("."))
}

fn schema_field(v: &Value) -> String {
    match parse(v) {
        Err(Error::Schema { field, .. }) => field,
        other => panic!("expected a schema error, got {other:?}"),
    }
}

/// A small instance-generalization run that finishes in seconds.
fn tiny() -> Value {
    let mut v = spec_value("instance.json");
    v["demos"]["count"] = json!(4);
    v["train_seeds"] = json!({"start": 0, "count": 4});
    v["eval_seeds"] = json!({"start": 1000, "count": 3});
    v["missing_target_seeds"] = json!({"start": 2000, "count": 2});
    v["eval_instances"] = json!([1, 2]);
    v["attention"]["train"]["epochs"] = json!(5);
    v["policy"]["bc"]["epochs"] = json!(20);
    v["task"]["horizon"] = json!(30);
    v
}

#[test]
fn shipped_specs_validate() {
    for name in [
        "instance.json",
        "narrowing.json",
        "scope.json",
        "sweep.json",
    ] {
        let spec: ExperimentSpec = load_artifact(specs_dir().join(name)).unwrap();
        spec.validate().unwrap();
    }
}

#[test]
fn spec_errors_name_the_field() {
    let mut v = spec_value("sweep.json");
    v["eval_seeds"] = json!({"start": 50, "count": 10});
    assert_eq!(schema_field(&v), "eval_seeds");

    let mut v = spec_value("sweep.json");
    v["attention"]["crop_classes"] = json!(["orange"]);
    assert_eq!(schema_field(&v), "attention.crop_classes");

    let mut v = spec_value("sweep.json");
    v["attention"]["crop_classes"] = json!(["orange", "teapot"]);
    assert_eq!(schema_field(&v), "bank.clusters");

    let mut v = spec_value("sweep.json");
    v["train_seeds"]["count"] = json!(3);
    assert_eq!(schema_field(&v), "train_seeds.count");

    let mut v = spec_value("scope.json");
    v.as_object_mut().unwrap().remove("finetune");
    assert_eq!(schema_field(&v), "finetune");

    let mut v = spec_value("narrowing.json");
    v["distractor"]["class_id"] = json!("mug_brown");
    assert_eq!(schema_field(&v), "distractor.class_id");

    let mut v = spec_value("sweep.json");
    v["attention"]["trian"] = json!({});
    let msg = parse(&v).unwrap_err().to_string();
    assert!(msg.contains("attention") && msg.contains("trian"), "{msg}");
}

#[test]
fn report_round_trips_and_rejects_tampering() {
    let spec = parse(&tiny()).unwrap();
    let report = run_experiment(&spec, false).unwrap();
    assert!(report.wall_clock_seconds.is_none());
    assert_eq!(report.groups.len(), 4);
    for g in &report.groups {
        assert_eq!(g.records.len(), g.conditions * spec.repetitions);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    save_artifact(&path, &report).unwrap();
    let back: ExperimentReport = load_artifact(&path).unwrap();
    assert_eq!(back, report);
    assert_eq!(
        to_json_string(&back).unwrap(),
        to_json_string(&report).unwrap()
    );

    let mut v: Value = serde_json::from_str(&to_json_string(&report).unwrap()).unwrap();
    let hits = v["groups"][0]["success"]["hits"].as_u64().unwrap();
    v["groups"][0]["success"]["hits"] = json!(hits ^ 1);
    assert!(from_json_str::<ExperimentReport>(&v.to_string(), dir.path()).is_err());

    let mut v: Value = serde_json::from_str(&to_json_string(&report).unwrap()).unwrap();
    let passed = v["checks"][0]["passed"].as_bool().unwrap();
    v["checks"][0]["passed"] = json!(!passed);
    assert!(from_json_str::<ExperimentReport>(&v.to_string(), dir.path()).is_err());
}

#[test]
fn experiments_are_deterministic_in_the_seed() {
    let spec = parse(&tiny()).unwrap();
    let a = to_json_string(&run_experiment(&spec, false).unwrap()).unwrap();
    let b = to_json_string(&run_experiment(&spec, false).unwrap()).unwrap();
    assert_eq!(a, b);
    let mut other = spec.clone();
    other.seed += 1;
    let c = to_json_string(&run_experiment(&other, false).unwrap()).unwrap();
    assert_ne!(a, c);
}
