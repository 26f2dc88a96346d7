use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn objattn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objattn"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_spec(dir: &Path) -> PathBuf {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/instance.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["demos"]["count"] = json!(3);
    v["train_seeds"] = json!({"start": 0, "count": 4});
    let mut ft = v["attention"]["train"].clone();
    ft["epochs"] = json!(2);
    v["finetune"] = json!({"demos": {"count": 1, "action_noise": 0.1}, "train": ft});
    v["eval_seeds"] = json!({"start": 1000, "count": 3});
    v["attention"]["train"]["epochs"] = json!(5);
    v["policy"]["bc"]["epochs"] = json!(10);
    v["policy"]["rl"] = json!({
        "population": 4, "elite_fraction": 0.5, "iterations": 1, "init_noise": 0.01,
        "noise_floor": 0.001, "episodes_per_candidate": 1, "distance_weight": 1.0,
        "approach_weight": 0.25, "success_bonus": 10.0
    });
    let out = dir.join("spec.json");
    std::fs::write(&out, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    out
}

#[test]
fn stepwise_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spec(dir);
    let common = ["--config", "spec.json", "--seed", "3"];
    let run = |cmd: &[&str]| ok(objattn(&[cmd, &common[..]].concat(), dir));
    run(&["gen-demos", "--out", "demos"]);
    assert!(dir.join("demos/bank.json").exists());
    assert!(dir.join("demos/demo_002.json").exists());
    run(&[
        "train-attention",
        "--demos",
        "demos",
        "--out",
        "attention.json",
    ]);
    run(&[
        "finetune-attention",
        "--model",
        "attention.json",
        "--demos",
        "demos",
        "--out",
        "tuned.json",
    ]);
    run(&[
        "train-policy",
        "--attention",
        "tuned.json",
        "--demos",
        "demos",
        "--out",
        "policy.json",
    ]);
    run(&[
        "train-policy",
        "--attention",
        "tuned.json",
        "--demos",
        "demos",
        "--no-vision",
        "--out",
        "blind.json",
    ]);
    let text = run(&[
        "eval",
        "--attention",
        "tuned.json",
        "--policy",
        "policy.json",
        "--out",
        "eval.json",
    ]);
    assert!(text.contains("success"), "{text}");
    let eval: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["records"].as_array().unwrap().len(), 3);

    let again = tempfile::tempdir().unwrap();
    small_spec(again.path());
    ok(objattn(
        &[&["gen-demos", "--out", "demos"][..], &common[..]].concat(),
        again.path(),
    ));
    ok(objattn(
        &[
            &[
                "train-attention",
                "--demos",
                "demos",
                "--out",
                "attention.json",
            ][..],
            &common[..],
        ]
        .concat(),
        again.path(),
    ));
    assert_eq!(
        std::fs::read(dir.join("attention.json")).unwrap(),
        std::fs::read(again.path().join("attention.json")).unwrap()
    );
}

#[test]
fn experiment_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spec(dir);
    let table = ok(objattn(
        &["experiment", "spec.json", "--out", "report.json"],
        dir,
    ));
    assert!(
        table.starts_with("instance-generalization seed=7"),
        "{table}"
    );
    let printed = ok(objattn(&["report", "report.json"], dir));
    assert_eq!(printed, table);
    ok(objattn(
        &["report", "report.json", "--out", "table.txt"],
        dir,
    ));
    assert_eq!(
        std::fs::read_to_string(dir.join("table.txt")).unwrap(),
        table
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], "1");
    assert!(report.get("wall_clock_seconds").is_none());
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = objattn(&["experiment", "nope.json"], dir);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    std::fs::write(
        dir.join("bad.json"),
        r#"{"schema_version": "1", "experiment_kind": "juggling"}"#,
    )
    .unwrap();
    assert!(!objattn(&["experiment", "bad.json"], dir).status.success());

    std::fs::write(dir.join("old.json"), r#"{"schema_version": "0"}"#).unwrap();
    let old = objattn(&["report", "old.json"], dir);
    assert!(!old.status.success());
    assert!(String::from_utf8_lossy(&old.stderr).contains("schema_version"));

    small_spec(dir);
    assert!(!objattn(&["gen-demos", "--config", "spec.json"], dir)
        .status
        .success());
    assert!(!objattn(
        &[
            "train-attention",
            "--config",
            "spec.json",
            "--demos",
            "empty",
            "--out",
            "a.json"
        ],
        dir
    )
    .status
    .success());
    assert!(!objattn(&["no-such-command"], dir).status.success());
}
