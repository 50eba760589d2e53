use std::path::Path;
use std::process::{Command, Output};

use hdtr_core::ImageF32;

fn hdtr(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hdtr"));
    cmd.args(args).env_remove("HDTR_SEED").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Exit code and the JSON error record on the last stderr line.
fn failure(out: &Output) -> (i32, serde_json::Value) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(last).unwrap_or_else(|_| panic!("not JSON: {stderr}"));
    (out.status.code().unwrap(), v)
}

fn train_config(dir: &Path, name: &str, seed: u64) -> String {
    let path = dir.join(format!("{name}.toml"));
    let text = format!(
        "seed = {seed}\nsteps = 2\nbatch_size = 2\nlog_every = 1\ncheckpoint = {:?}\n\n[model]\nbase_channels = 8\n\n[data]\nsource = \"synthetic\"\nframes = 3\n",
        dir.join(format!("{name}.ckpt"))
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn seed_env_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hdtr(&["train", "--config", &train_config(dir.path(), "a", 0)], &[("HDTR_SEED", "7")]));
    ok(&hdtr(&["train", "--config", &train_config(dir.path(), "b", 7)], &[]));
    ok(&hdtr(&["train", "--config", &train_config(dir.path(), "c", 7)], &[("HDTR_SEED", "8")]));
    let (a, b, c) = (read(&dir.path().join("a.ckpt")), read(&dir.path().join("b.ckpt")), read(&dir.path().join("c.ckpt")));
    assert_eq!(a, b);
    assert_ne!(b, c);

    let (code, err) = failure(&hdtr(&["train", "--config", &train_config(dir.path(), "d", 0)], &[("HDTR_SEED", "seven")]));
    assert_eq!((code, err["error"].as_str()), (2, Some("config")));
}

#[test]
fn restore_writes_every_frame_and_one_record_each() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hdtr(&["train", "--config", &train_config(d, "m", 1)], &[]));
    let video = d.join("video");
    ok(&hdtr(&["synth", "--out", video.to_str().unwrap(), "--frames", "4", "--drop-landmarks", "2"], &[]));
    let out = d.join("out");
    let stdout = ok(&hdtr(
        &[
            "restore",
            "--ckpt",
            d.join("m.ckpt").to_str().unwrap(),
            "--frames",
            video.join("frames").to_str().unwrap(),
            "--landmarks",
            video.join("landmarks").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    ));
    let records: Vec<serde_json::Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    for (i, r) in records.iter().enumerate() {
        let name = format!("{i:05}.png");
        assert_eq!(r["frame"], name.as_str());
        assert!(r["brenner"].as_f64().unwrap() > 0.0);
        assert!(out.join(&name).exists());
        let side = if i == 2 { 128 } else { 96 };
        assert_eq!((r["width"].as_u64(), r["height"].as_u64()), (Some(side), Some(side)));
        assert_eq!(r["latency_s"].is_null(), i == 2);
    }
    let dropped = ImageF32::load(&video.join("frames/00002.png")).unwrap();
    assert_eq!(ImageF32::load(&out.join("00002.png")).unwrap().as_slice(), dropped.as_slice());

    let table = ok(&hdtr(&["evaluate", "--frames", out.to_str().unwrap(), "--against", video.join("frames").to_str().unwrap()], &[]));
    assert!(table.contains("brenner") && table.contains("against"));
}

#[test]
fn failures_print_a_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let missing = format!("{d}/missing.ckpt");
    let base = ["restore", "--ckpt", &missing, "--frames", d, "--landmarks", d, "--out", d];

    let (code, err) = failure(&hdtr(&base, &[]));
    assert_eq!(code, 1);
    assert_eq!(err["error"], "io");
    assert!(!err["message"].as_str().unwrap().is_empty());

    let mut bad_policy = base.to_vec();
    bad_policy.extend(["--ref-policy", "nearest"]);
    let (code, err) = failure(&hdtr(&bad_policy, &[]));
    assert_eq!((code, err["error"].as_str()), (2, Some("config")));
    assert!(err["message"].as_str().unwrap().contains("nearest"));

    std::fs::write(dir.path().join("garbage.ckpt"), b"not a checkpoint").unwrap();
    let garbage = format!("{d}/garbage.ckpt");
    let (code, err) = failure(&hdtr(&["bench", "--ckpt", &garbage, "--iters", "1"], &[]));
    assert_eq!(code, 1);
    assert!(err["error"].as_str().unwrap().starts_with("checkpoint"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&hdtr(&["synth", "--out", out.to_str().unwrap(), "--frames", "2", "--size", "100"], &[("HDTR_SEED", seed)]));
        (read(&out.join("frames/00001.png")), read(&out.join("landmarks/00001.txt")))
    };
    assert_eq!(run("a", "3"), run("b", "3"));
    assert_ne!(run("a", "3"), run("c", "4"));
}
