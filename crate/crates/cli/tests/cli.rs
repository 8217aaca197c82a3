use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn toy_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn rvqa(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvqa"))
        .args(args)
        .arg("--root")
        .arg(toy_root())
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn toy(out: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    all.extend(["--config", "config.json"]);
    rvqa(out, &all)
}

fn ok_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn pipeline(out: &Path) {
    for stage in ["build-dataset", "train-detector", "train-vqa"] {
        ok_json(&toy(out, &[stage]));
    }
}

#[test]
fn unknown_flag_prints_usage_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = rvqa(dir.path(), &["selftest", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_input_path_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"data": {"annotations": "nowhere/annotations.jsonl"}}"#).unwrap();
    let o = rvqa(dir.path(), &["build-dataset", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere/annotations.jsonl"));
}

#[test]
fn stage_before_its_inputs_exist_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = toy(dir.path(), &["eval-vqa"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("msan.ckpt"));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, "{ not json").unwrap();
    let o = rvqa(dir.path(), &["build-dataset", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_single_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&rvqa(dir.path(), &["selftest", "--criterion", "5"]));
    assert_eq!(v["passed"], true);
    assert_eq!(rvqa(dir.path(), &["selftest", "--criterion", "42"]).status.code(), Some(2));
}

#[test]
fn grad_check_reports_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&rvqa(dir.path(), &["grad-check"]));
    assert_eq!(v["passed"], true);
    let names: Vec<&str> = v["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for layer in ["linear", "GRU step", "MLB", "visual attention", "semantic attention", "joint embedding"] {
        assert!(names.contains(&layer), "{layer}");
    }
}

#[test]
fn reruns_are_identical_and_seed_is_recorded() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        pipeline(d);
        ok_json(&toy(d, &["eval-vqa", "--seed", "7"]));
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["rvqa.jsonl", "detector.ckpt", "msan.ckpt", "eval_report.json", "predictions.jsonl"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let report: Value = serde_json::from_slice(&read(a.path(), "eval_report.json")).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn predict_and_multi_choice_use_the_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let v = ok_json(&toy(
        dir.path(),
        &["predict", "--image", "toy003", "--question", "Is there a dog in the picture?"],
    ));
    assert!(v["answer"].is_string());
    let v = ok_json(&toy(
        dir.path(),
        &["predict", "--image", "toy003", "--question", "Is there a dog?", "--choice", "yes", "--choice", "no"],
    ));
    assert!(["yes", "no"].contains(&v["answer"].as_str().unwrap()));
    let v = ok_json(&toy(
        dir.path(),
        &["predict", "--image", "toy003", "--question", "what?", "--choice", "zebra", "--choice", "llama"],
    ));
    assert_eq!(v["answer"], "zebra");
    assert_eq!(v["fallback"], true);
}

#[test]
fn tampered_vocabulary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let path = dir.path().join("answer_vocab.txt");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("extra\n");
    std::fs::write(&path, text).unwrap();
    let o = toy(dir.path(), &["eval-vqa"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn case_study_top5_limits_facts() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let v = ok_json(&toy(dir.path(), &["case-study", "--top5"]));
    assert_eq!(v["facts_shown"], 5);
    for r in v["records"].as_array().unwrap() {
        assert!(r["facts"].as_array().unwrap().len() <= 5);
    }
    let file: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("case_study.json")).unwrap()).unwrap();
    assert_eq!(file, v);
}

#[test]
fn variant_without_facts_trains_without_a_detector() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Value = serde_json::from_str(&std::fs::read_to_string(toy_root().join("config.json")).unwrap()).unwrap();
    config["msan"]["variant"] = "q_i_att".into();
    let path = dir.path().join("qiatt.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let cfg = path.to_str().unwrap();
    let v = ok_json(&rvqa(dir.path(), &["train-vqa", "--config", cfg]));
    assert_eq!(v["variant"], "q_i_att");
    ok_json(&rvqa(dir.path(), &["eval-vqa", "--config", cfg]));

    config["msan"]["variant"] = "full".into();
    std::fs::write(&path, config.to_string()).unwrap();
    let o = rvqa(dir.path(), &["train-vqa", "--config", cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("detector"));
}
