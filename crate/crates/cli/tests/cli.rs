//! End-to-end checks of the `labelattn` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_labelattn"));
    c.env("RUST_LOG", "warn").env_remove("LABELATTN_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_config() -> Value {
    json!({
        "seed": 11,
        "corpus": {"num_labels": 6, "train_docs": 40, "dev_docs": 12, "test_docs": 12,
                   "doc_len_mean": 40, "doc_len_min": 24, "doc_len_max": 56,
                   "mean_labels": 2.0, "noise_vocab_size": 60},
        "encoder": {"layers": 1, "heads": 2, "hidden": 16, "ffn": 32, "max_positions": 18},
        "segmenter": {"segment_len": 16, "max_doc_len": 64},
        "train": {"epochs": 2, "peak_lr": 0.001, "warmup_steps": 2, "batch_size": 4},
        "pretrain": {"steps": 10, "warmup_steps": 2, "peak_lr": 0.001}
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn gen_data_is_deterministic_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &tiny_config());
    let cfg = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (out, seed) in [(&a, None), (&b, None), (&c, Some("12"))] {
        let mut args = vec!["gen-data", "--config", cfg, "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut differs = false;
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "labels.json", "stats.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        differs |= fs::read(a.join(f)).unwrap() != fs::read(c.join(f)).unwrap();
    }
    assert!(differs);
    assert_eq!(read_json(&a.join("config.json"))["seed"], 11);
    assert_eq!(read_json(&c.join("config.json"))["corpus"]["seed"], 12);
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bad = tiny_config();
    bad["corpus"]["zipf_exponent"] = json!(0.0);
    let cfg = write_config(tmp.path(), "bad.json", &bad);
    let o = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("d").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("zipf_exponent"));

    let mut typo = tiny_config();
    typo["train"]["epoch"] = json!(3);
    let cfg = write_config(tmp.path(), "typo.json", &typo);
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));

    let mut no_seed = tiny_config();
    no_seed.as_object_mut().unwrap().remove("seed");
    let cfg = write_config(tmp.path(), "noseed.json", &no_seed);
    let o = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("e").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let cfg = write_config(tmp.path(), "ok.json", &tiny_config());
    let o = run(&["ablate", "--suite", "dropout", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&o), 2);
    let o = run(&["gen-data", "--out", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_inputs_exit_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--run", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let cfg = write_config(tmp.path(), "c.json", &tiny_config());
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        tmp.path().join("missing").to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn diverging_training_exits_with_three_and_dumps_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = tiny_config();
    v["train"]["peak_lr"] = json!(1e30);
    v["train"]["warmup_steps"] = json!(0);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let dump = read_json(&out.join("failure.json"));
    assert!(dump["error"].as_str().unwrap().contains("non-finite"));
}

#[test]
fn train_eval_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &tiny_config());
    let cfg = cfg.to_str().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&run(&["gen-data", "--config", cfg, "--out", data.to_str().unwrap()])), 0);

    let ckpt = tmp.path().join("enc.ckpt");
    let o = run(&["pretrain", "--config", cfg, "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ckpt.exists());
    let curve = fs::read_to_string(tmp.path().join("enc.loss.jsonl")).unwrap();
    assert_eq!(curve.lines().count(), 10);

    let run_dir = tmp.path().join("run");
    let o = bin()
        .args(["train", "--config", cfg, "--data", data.to_str().unwrap(), "--init", ckpt.to_str().unwrap()])
        .env("LABELATTN_OUT_DIR", &run_dir)
        .env("LABELATTN_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&run_dir.join("manifest.json"));
    for f in manifest["files"].as_array().unwrap() {
        assert!(run_dir.join(f.as_str().unwrap()).exists(), "{f}");
    }
    assert_eq!(manifest["init"], ckpt.display().to_string());
    let echoed = read_json(&run_dir.join("config.json"));
    assert_eq!(echoed["data_path"], data.display().to_string());
    assert_eq!(echoed["encoder"]["seed"], 11);

    let run_s = run_dir.to_str().unwrap();
    assert_eq!(code(&run(&["eval", "--run", run_s, "--split", "test"])), 0);
    let first = fs::read(run_dir.join("eval_test.json")).unwrap();
    let preds = fs::read(run_dir.join("predictions_test.jsonl")).unwrap();
    assert_eq!(code(&run(&["eval", "--run", run_s, "--split", "test"])), 0);
    assert_eq!(fs::read(run_dir.join("eval_test.json")).unwrap(), first);
    assert_eq!(fs::read(run_dir.join("predictions_test.jsonl")).unwrap(), preds);
    assert_eq!(read_json(&run_dir.join("eval_test.json")), read_json(&run_dir.join("test_report.json")));

    assert_eq!(code(&run(&["eval", "--run", run_s, "--split", "dev"])), 0);
    assert_eq!(read_json(&run_dir.join("eval_dev.json")), read_json(&run_dir.join("dev_report.json")));

    let o = run(&["eval", "--run", run_s, "--split", "test", "--threshold", "0.5"]);
    assert_eq!(code(&o), 0);
    let over = read_json(&run_dir.join("eval_test_override.json"));
    assert_eq!(over["threshold_source"], "override");
    assert_eq!(over["threshold"], 0.5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("override"));
    assert_eq!(code(&run(&["eval", "--run", run_s, "--split", "holdout"])), 2);

    let o = run(&["report", "--runs", run_s, "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("run,head,init,"));
    assert!(csv.contains("\r\nrun,laat,"));
    let md_path = tmp.path().join("t.md");
    let o = run(&["report", "--runs", run_s, "--format", "md", "--out", md_path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(md_path).unwrap().contains("| Model | AUC Macro"));
    let o = run(&["report", "--runs", run_s, "--format", "json"]);
    let rows: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows[0]["micro_f1"], manifest["report"]["micro_f1"]);
}

#[test]
fn ablation_suite_writes_runs_and_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = tiny_config();
    v["train"]["epochs"] = json!(1);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("abl");
    let o = run(&["ablate", "--suite", "schedule", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["linear-decay", "constant", "linear-decay-low-lr"] {
        assert!(out.join(name).join("manifest.json").exists());
    }
    let md = fs::read_to_string(out.join("comparison.md")).unwrap();
    assert_eq!(md.lines().count(), 5);
    let rows: Value = read_json(&out.join("comparison.json"));
    assert_eq!(rows.as_array().unwrap().len(), 3);
    let o = run(&["report", "--runs", out.to_str().unwrap(), "--format", "md"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 5);
}
