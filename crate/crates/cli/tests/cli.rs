use std::fs;
use std::process::Command;

use dfa_core::env::trajectory::FrameEncoding;
use dfa_core::harness::{gen_shift_task, gen_train_task, ShiftKind};
use dfa_core::policy::checkpoint;
use serde_json::Value;

fn dfa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dfa"))
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nav.ckpt");
    let json = dir.path().join("nav.json");
    let run = dfa().args(["train", "--domain", "nav2d", "--seed", "3", "--out"]).arg(&out).arg("--json").arg(&json).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!(report["train_success"].as_f64().unwrap() >= 0.9);
    let params = checkpoint::load(&out).unwrap();
    assert_eq!(params.domain().name(), "nav2d");
    assert!(fs::metadata(&json).unwrap().len() > 0);
}

#[test]
fn replay_checks_a_trajectory_file() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_shift_task(&gen_train_task(dfa_core::env::Domain::Doorkey, 1).unwrap(), ShiftKind::ConceptTi, 1).unwrap();
    let demo = task.demo().unwrap();
    let path = dir.path().join("demo.jsonl");
    demo.write_jsonl(fs::File::create(&path).unwrap(), FrameEncoding::Png).unwrap();
    let run = dfa().args(["replay", "--trajectory"]).arg(&path).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["steps"], 35);
    assert_eq!(report["actions"].as_array().unwrap().len(), 35);

    // A tampered action no longer matches the stored frames.
    let text = fs::read_to_string(&path).unwrap().replacen("\"up\"", "\"down\"", 1);
    fs::write(&path, text).unwrap();
    assert!(!dfa().args(["replay", "--trajectory"]).arg(&path).output().unwrap().status.success());
}

#[test]
fn experiment_honours_the_output_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    fs::write(
        &config,
        r#"{"domains": ["nav2d"], "shifts": ["distractor_ti"], "conditions": [{"kind": "oracle_fb"}], "seeds": 1,
            "train": {"learning_rate": 0.001, "epochs": 20, "hidden": 16}, "finetune": {"learning_rate": 0.001, "epochs": 3}}"#,
    )
    .unwrap();
    let target = dir.path().join("override");
    let run = dfa()
        .args(["experiment", "--out", "ignored", "--config"])
        .arg(&config)
        .env("DFA_OUTPUT_DIR", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(target.join("records.jsonl").exists());
    assert!(target.join("summary.csv").exists());
    assert!(!dir.path().join("ignored").exists());
    assert!(String::from_utf8_lossy(&run.stdout).contains("oracle_fb"));
}

#[test]
fn unknown_shift_lists_the_choices() {
    let run = dfa().args(["session", "--domain", "nav2d", "--shift", "sideways"]).output().unwrap();
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("concept_ti"));
}
