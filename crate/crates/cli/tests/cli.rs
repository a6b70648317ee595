use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"{
  "seed": 3,
  "stage1": {"episodes": 30},
  "recognizer": {"epochs": 2, "hidden_dim": 8},
  "policy": {"updates": 4, "episodes_per_update": 8, "hidden_dim": 8},
  "dataset": {"n": 40, "seed": 5}
}"#;

fn evidar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evidar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn train_all(dir: &Path, config: &Path) -> PathBuf {
    let run = dir.join("run");
    ok(&evidar(&["train", "--stage", "all", "--config", p(config), "--out", p(&run)]));
    run
}

#[test]
fn gen_dataset_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("sub/b.jsonl");
    let stdout = ok(&evidar(&["gen-dataset", "--n", "30", "--seed", "7", "--out", p(&a)]));
    assert!(stdout.contains("easy") && stdout.contains("moderate") && stdout.contains("hard"));
    assert!(stdout.contains("total"));
    ok(&evidar(&["gen-dataset", "--n", "30", "--seed", "7", "--out", p(&b)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 31);
}

#[test]
fn bad_config_path_exits_2_and_names_it() {
    let out = evidar(&["gen-dataset", "--out", "x.jsonl", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cfg.json"));
}

#[test]
fn invalid_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"policy": {"clip": -1.0}}"#);
    let out = evidar(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "typo.json", r#"{"polcy": {}}"#);
    let out = evidar(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(evidar(&["evaluate", "--bogus"]).status.code(), Some(2));
    assert_eq!(evidar(&[]).status.code(), Some(2));
}

#[test]
fn print_config_dumps_resolved_json() {
    let text = ok(&evidar(&["--print-config"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["bench", "stage1", "recognizer", "policy", "dataset", "evaluation"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let text = ok(&evidar(&["train", "--print-config", "--config", p(&cfg), "--out", "unused"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["policy"]["seed"], 3);
    assert_eq!(v["policy"]["updates"], 4);
    assert!(!Path::new("unused").exists());
}

#[test]
fn policy_stage_requires_recognizer() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = evidar(&["train", "--stage", "policy", "--config", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("recognizer"));
}

#[test]
fn train_all_writes_reproducible_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let a = train_all(&tmp.path().join("a"), &cfg);
    let b = train_all(&tmp.path().join("b"), &cfg);
    for f in ["config.json", "recognizer.json", "recognizer_metrics.csv", "policy.json", "policy_updates.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert!(run["elapsed_s"].is_number());
    let updates = fs::read_to_string(a.join("policy_updates.csv")).unwrap();
    assert_eq!(updates.lines().count(), 2 + 4);

    // the recognizer-only stage followed by the policy stage gives the same run
    let c = tmp.path().join("c");
    ok(&evidar(&["--jobs", "1", "train", "--stage", "recognizer", "--config", p(&cfg), "--out", p(&c)]));
    assert!(!c.join("policy.json").exists());
    ok(&evidar(&["train", "--stage", "policy", "--config", p(&cfg), "--out", p(&c)]));
    assert_eq!(fs::read(a.join("policy.json")).unwrap(), fs::read(c.join("policy.json")).unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let tmp = TempDir::new().unwrap();
    let full_cfg = write_config(tmp.path(), "full.json", TINY);
    let half_cfg = write_config(tmp.path(), "half.json", &TINY.replace("\"updates\": 4", "\"updates\": 2"));
    let full = train_all(&tmp.path().join("full"), &full_cfg);
    let part = train_all(&tmp.path().join("part"), &half_cfg);
    ok(&evidar(&[
        "train", "--stage", "policy", "--resume", "--config", p(&full_cfg), "--out", p(&part),
    ]));
    assert_eq!(fs::read(full.join("policy.json")).unwrap(), fs::read(part.join("policy.json")).unwrap());
    assert_eq!(
        fs::read(full.join("policy_updates.csv")).unwrap(),
        fs::read(part.join("policy_updates.csv")).unwrap()
    );

    let other = write_config(tmp.path(), "other.json", &TINY.replace("\"episodes_per_update\": 8,", "\"episodes_per_update\": 8, \"clip\": 0.3,"));
    let out = evidar(&["train", "--stage", "policy", "--resume", "--config", p(&other), "--out", p(&part)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_matrix_and_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let run = train_all(tmp.path(), &cfg);
    let ts = tmp.path().join("test.jsonl");
    ok(&evidar(&["gen-dataset", "--config", p(&cfg), "--out", p(&ts)]));

    let eval = tmp.path().join("eval");
    let stdout = ok(&evidar(&[
        "evaluate", "--agent", "ours,fixation", "--fusion", "average,vote,last,max,evidential", "--sigma-list", "0,7",
        "--testset", p(&ts), "--ckpt", p(&run), "--out", p(&eval), "--config", p(&cfg),
    ]));
    assert!(stdout.contains("overall") && stdout.contains("change"));
    let rows = fs::read_to_string(eval.join("evaluation.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2 + 2 * 5 * 2 * 4);
    let steps = fs::read_to_string(eval.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 2 + 2 * 5 * 2 * 10);
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["evaluation"]["sigmas"], serde_json::json!([0.0, 7.0]));

    let again = tmp.path().join("eval2");
    ok(&evidar(&[
        "evaluate", "--agent", "ours,fixation", "--fusion", "average,vote,last,max,evidential", "--sigma-list", "0,7",
        "--testset", p(&ts), "--ckpt", p(&run), "--out", p(&again), "--config", p(&cfg), "--jobs", "1",
    ]));
    for f in ["evaluation.csv", "steps.csv", "summary.txt", "config.json"] {
        assert_eq!(fs::read(eval.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f} differs");
    }

    let report = tmp.path().join("report");
    ok(&evidar(&["report", "--in", p(&eval), "--out", p(&report)]));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["tables"]["evaluation"].as_array().unwrap().len(), 80);
    assert_eq!(doc["tables"]["step-curve"][0]["step"], 1.0);
    let dat = fs::read_to_string(report.join("step_curves.dat")).unwrap();
    assert_eq!(dat.matches("# source=").count(), 20);
    assert!(report.join("levels.dat").exists() && report.join("noise.dat").exists());

    // the whole run tree, training CSVs included
    let all = tmp.path().join("report_all");
    ok(&evidar(&["report", "--in", p(tmp.path()), "--out", p(&all)]));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(all.join("report.json")).unwrap()).unwrap();
    assert!(doc["tables"]["policy-updates"].is_array());
    assert!(all.join("recognizer-metrics.dat").exists());
}

#[test]
fn evaluate_missing_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let ts = tmp.path().join("test.jsonl");
    ok(&evidar(&["gen-dataset", "--n", "5", "--out", p(&ts)]));
    let out = evidar(&[
        "evaluate", "--agent", "fixation", "--testset", p(&ts), "--ckpt", p(&tmp.path().join("none")), "--out",
        p(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = evidar(&[
        "evaluate", "--testset", p(&tmp.path().join("missing.jsonl")), "--ckpt", p(tmp.path()), "--out",
        p(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_guards() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = evidar(&["report", "--in", p(&empty), "--out", p(&tmp.path().join("r0"))]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));

    let mixed = tmp.path().join("mixed");
    fs::create_dir(&mixed).unwrap();
    fs::write(mixed.join("a.csv"), "# schema: step-curve v1\nstep,success\n1,0.5\n").unwrap();
    fs::write(mixed.join("b.csv"), "# schema: step-curve v2\nstep,success\n1,0.5\n").unwrap();
    let out = evidar(&["report", "--in", p(&mixed), "--out", p(&tmp.path().join("r1"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 2"));
}
