//! End-to-end runs of the `qprune` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qprune"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = qprune(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn synth(dir: &Path, seed: u64) -> PathBuf {
    let d = dir.join(format!("data{seed}"));
    ok(&["features", "--out", &s(&d), "--seed", &seed.to_string(), "--set", "samples=48", "--set", "frames=8", "--set", "bins=8"]);
    d
}

fn train(dir: &Path, data: &Path, name: &str, iterations: usize) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "train",
        "--out",
        &s(&out),
        "--seed",
        "3",
        "--set",
        &format!("data={}", s(data)),
        "--set",
        &format!("iterations={iterations}"),
        "--set",
        "batch_size=16",
    ]);
    out.join("model.qprs")
}

#[test]
fn missing_teacher_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 0);
    let out = qprune(&["distill", "--teacher", &s(&dir.path().join("nope.qprs")), "--set", &format!("data={}", s(&data))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teacher"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\niterations = 3\nlearning_rate = 0.1\n").unwrap();
    let out = qprune(&["train", "--config", &s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    assert_eq!(qprune(&["train", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(qprune(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn same_seed_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 0);
    let a = train(dir.path(), &data, "a", 8);
    let b = train(dir.path(), &data, "b", 8);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert!(!std::fs::read(dir.path().join("a/train_log.csv")).unwrap().is_empty());
}

#[test]
fn zero_ratio_prune_is_identity_and_plans_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 0);
    let ckpt = train(dir.path(), &data, "base", 4);
    let p0 = dir.path().join("p0");
    ok(&["prune", "--out", &s(&p0), "--ratio", "0", "--set", &format!("checkpoint={}", s(&ckpt))]);
    assert_eq!(std::fs::read(p0.join("pruned.qprs")).unwrap(), std::fs::read(&ckpt).unwrap());

    let first = dir.path().join("gm");
    ok(&["prune", "--out", &s(&first), "--method", "gm", "--ratio", "0.5", "--set", &format!("checkpoint={}", s(&ckpt))]);
    let replay = dir.path().join("replay");
    ok(&[
        "prune",
        "--out",
        &s(&replay),
        "--set",
        &format!("checkpoint={}", s(&ckpt)),
        "--set",
        &format!("plan={}", s(&first.join("plan.txt"))),
    ]);
    assert_eq!(std::fs::read(first.join("pruned.qprs")).unwrap(), std::fs::read(replay.join("pruned.qprs")).unwrap());
    assert_eq!(std::fs::read(first.join("plan.txt")).unwrap(), std::fs::read(replay.join("plan.txt")).unwrap());
    let report = std::fs::read_to_string(first.join("prune_report.txt")).unwrap();
    assert!(report.starts_with("method gm p 0.5: params"), "{report}");
}

#[test]
fn alpha_one_distillation_matches_hard_label_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 0);
    let teacher = train(dir.path(), &data, "teacher", 4);
    let logs: Vec<String> = ["t1", "t2"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let out = dir.path().join(name);
            // Different temperatures must not matter when the KL weight is zero.
            ok(&[
                "distill",
                "--out",
                &s(&out),
                "--seed",
                "4",
                "--teacher",
                &s(&teacher),
                "--alpha",
                "1",
                "--temperature",
                if k == 0 { "2" } else { "7" },
                "--set",
                &format!("data={}", s(&data)),
                "--set",
                "iterations=5",
                "--set",
                "batch_size=16",
            ]);
            std::fs::read_to_string(out.join("distill_log.csv")).unwrap()
        })
        .collect();
    // iteration,loss,ce,kl,metric: the kl column is logged but carries no weight.
    let hard_cols = |log: &str| -> Vec<Vec<String>> {
        log.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 3).map(|(_, f)| f.to_string()).collect()).collect()
    };
    for row in hard_cols(&logs[0]).iter().skip(1).filter(|r| !r[1].is_empty()) {
        assert_eq!(row[1], row[2], "total loss is not the CE term");
    }
    assert_eq!(hard_cols(&logs[0]), hard_cols(&logs[1]));
}

#[test]
fn eval_twice_reports_the_same_metric_and_compare_merges() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 0);
    let ckpt = train(dir.path(), &data, "base", 4);
    let mut csvs = Vec::new();
    for (k, p) in ["0", "0.25", "0.5"].iter().enumerate() {
        let out = dir.path().join(format!("e{k}"));
        ok(&[
            "eval",
            "--out",
            &s(&out),
            "--set",
            &format!("checkpoint={}", s(&ckpt)),
            "--set",
            &format!("data={}", s(&data)),
            "--set",
            &format!("ratio={p}"),
            "--set",
            "repeats=3",
        ]);
        csvs.push(out.join("eval.csv"));
    }
    let metric = |p: &Path| std::fs::read_to_string(p).unwrap().lines().find(|l| l.starts_with("accuracy:")).unwrap().to_string();
    assert_eq!(metric(&dir.path().join("e0/eval.txt")), metric(&dir.path().join("e1/eval.txt")));

    let joined = csvs.iter().rev().map(|p| s(p)).collect::<Vec<_>>().join(",");
    let cmp = dir.path().join("cmp");
    let out = ok(&["compare", "--out", &s(&cmp), "--set", &format!("inputs={joined}")]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.lines().count(), 4, "{table}");
    let merged = std::fs::read_to_string(cmp.join("compare.csv")).unwrap();
    assert_eq!(merged.lines().count(), 4);

    // A single input is allowed.
    ok(&["compare", "--out", &s(&cmp), "--set", &format!("inputs={}", s(&csvs[0]))]);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "model,method,p\nx,y,0\n").unwrap();
    let out = qprune(&["compare", "--out", &s(&cmp), "--set", &format!("inputs={}", s(&bad))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metric"), "{}", String::from_utf8_lossy(&out.stderr));
}
