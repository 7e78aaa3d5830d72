use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn curvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvd"))
        .args(args)
        .env("CURVD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary JSON on stdout")
}

fn files_in(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).unwrap();
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

/// A small IDX dataset of 4x4 "images" in 10 classes.
fn write_fixture(dir: &Path) {
    let n = 60;
    let mut pixels = Vec::with_capacity(n * 16);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        for p in 0..16 {
            let on = p == class || p == (class + 5) % 16;
            pixels.push(if on { 200 + (i % 7) as u8 * 5 } else { (i * 13 + p * 7) as u8 % 40 });
        }
        labels.push(class as u8);
    }
    curvd::datasets::write_idx_images(&dir.join("train-images-idx3-ubyte"), &pixels, n, 4, 4).unwrap();
    curvd::datasets::write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &labels).unwrap();
}

#[test]
fn missing_out_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_curvd"))
        .args(["spiral", "--seed", "7"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn unknown_flag_and_missing_file_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("x");
    let d = dir.to_str().unwrap();
    assert_eq!(curvd(&["spiral", "--out", d, "--bogus"]).status.code(), Some(1));
    assert_eq!(curvd(&["hist", "--scores", "/nonexistent.csv", "--out", d]).status.code(), Some(1));
    assert_eq!(curvd(&["spiral", "--out", d, "--config", "/nonexistent.json"]).status.code(), Some(1));
    assert_eq!(curvd(&["spiral", "--out", d, "--probes", "0"]).status.code(), Some(1));
    assert!(!dir.exists());
}

#[test]
fn unwritable_output_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let out = blocker.join("sub");
    let res = curvd(&["spiral", "--epochs", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn divergence_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let json = serde_json::json!({
        "dataset": {"kind": "blobs", "per_class": 5},
        "network": {"hidden": [8]},
        "optimizer": {"learning_rate": 1e300, "momentum": 0.9, "weight_decay": 0.0},
        "epochs": 3,
        "seed": 1
    });
    fs::write(&cfg, json.to_string()).unwrap();
    let out = tmp.path().join("run");
    let res = curvd(&["score", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn spiral_writes_history_and_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s7");
    let res = curvd(&["spiral", "--seed", "7", "--epochs", "6", "-q", "--out", out.to_str().unwrap()]);
    let summary = stdout_json(&res);
    assert_eq!(summary["experiment"], "spiral");
    assert!(summary["spiral"]["verdict"]["rise_then_fall"].is_boolean());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 7);
    let on_disk: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);
}

#[test]
fn corrupt_reports_both_aurocs_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    write_fixture(&data);
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let res = curvd(&[
            "corrupt", "--dataset", "mnist", "--data", data.to_str().unwrap(), "--frac", "0.2", "--seed", "1",
            "--epochs", "40", "-q", "--out", out.to_str().unwrap(),
        ]);
        let summary = stdout_json(&res);
        let c = &summary["corruption"];
        assert_eq!(c["num_corrupted"], 10);
        assert!(c.get("curvature_auroc").is_some() && c.get("inconfidence_auroc").is_some());
        for f in ["scores_curvature.csv", "scores_inconfidence.csv", "history.csv", "mask.csv", "summary.json"] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        trees.push(files_in(&out));
    }
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn score_rank_hist_compare_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    write_fixture(&data);
    let d = data.to_str().unwrap();
    let run = tmp.path().join("run");
    stdout_json(&curvd(&[
        "score", "--data", d, "--epochs", "3", "--top-k", "2", "-q", "--out", run.to_str().unwrap(),
    ]));
    let high = files_in(&run.join("images/high"));
    assert_eq!(high.len(), 2);
    assert!(high[0].0.to_string_lossy().starts_with("0_"));
    assert!(high[0].1.starts_with(b"P5\n4 4\n255\n"));

    let scores = run.join("scores_curvature.csv");
    let s = scores.to_str().unwrap();
    let mut rank_trees = Vec::new();
    for name in ["r1", "r2"] {
        let rank = tmp.path().join(name);
        let summary = stdout_json(&curvd(&[
            "rank", "--scores", s, "--top-k", "3", "--data", d, "--out", rank.to_str().unwrap(),
        ]));
        assert_eq!(summary["ranking"].as_array().unwrap().len(), 3);
        assert_eq!(files_in(&rank.join("images")).len(), 3);
        rank_trees.push(files_in(&rank));
    }
    assert_eq!(rank_trees[0], rank_trees[1]);

    let hist = tmp.path().join("hist");
    let summary = stdout_json(&curvd(&["hist", "--scores", s, "--bins", "5", "--out", hist.to_str().unwrap()]));
    let counts: u64 = summary["histogram"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts + summary["histogram"]["underflow"].as_u64().unwrap(), 60);

    let cmp = tmp.path().join("cmp");
    let summary = stdout_json(&curvd(&[
        "compare", "--scores", s, "--ref", s, "--top-k", "1,6,60", "--out", cmp.to_str().unwrap(),
    ]));
    assert_eq!(summary["compare"]["full_cosine"], 1.0);
    for t in summary["compare"]["top_k"].as_array().unwrap() {
        assert_eq!(t["cosine"], 1.0);
    }
}

#[test]
fn misaligned_compare_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "index,label,corrupted,score\n0,0,,1.0\n1,1,,2.0\n").unwrap();
    fs::write(&b, "index,label,corrupted,score\n0,0,,1.0\n2,1,,2.0\n").unwrap();
    let res = curvd(&[
        "compare", "--scores", a.to_str().unwrap(), "--ref", b.to_str().unwrap(), "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("row 1"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_curvd"))
        .args(["spiral", "--epochs", "1", "--out", tmp.path().join("o").to_str().unwrap()])
        .env("CURVD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
