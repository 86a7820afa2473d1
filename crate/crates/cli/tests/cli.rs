use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use appd_core::checkpoint::Checkpoint;
use appd_core::training::{initialize, TrainConfig};

fn appd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_appd"))
        .args(args)
        .env_remove("APPD_SEED")
        .output()
        .expect("run appd")
}

fn ok(args: &[&str]) {
    let out = appd(args);
    assert!(
        out.status.success(),
        "appd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    appd(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small mixed dataset: the first 40 anomalies and 40 normals.
fn small_data(dir: &Path) -> PathBuf {
    let sim = dir.join("sim");
    ok(&["simulate", "--kind", "mixed", "--seed", "5", "--out", s(&sim)]);
    let text = fs::read_to_string(sim.join("sequences.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut picked: Vec<&str> = lines[..40].to_vec();
    picked.extend(&lines[1000..1040]);
    let path = dir.join("small.jsonl");
    fs::write(&path, picked.join("\n") + "\n").unwrap();
    path
}

const TINY: &[&str] = &[
    "--iterations",
    "2",
    "--inner-steps",
    "1",
    "--generated-batch",
    "4",
    "--real-batch",
    "4",
    "--features",
    "6",
];

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, r#"{"generator_hidden": 6, "spectrum_hidden": [5]}"#).unwrap();
    path
}

fn trained(dir: &Path, data: &Path) -> PathBuf {
    let ckpt = dir.join("model.json");
    let config = tiny_config(dir);
    let mut args = vec!["train", "--data", s(data), "--config", s(&config), "--out", s(&ckpt), "--seed", "1"];
    args.extend_from_slice(TINY);
    ok(&args);
    ckpt
}

#[test]
fn simulate_is_byte_identical_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--kind", "singleton", "--seed", "7", "--out", s(&a)]);
    ok(&["simulate", "--kind", "singleton", "--seed", "7", "--out", s(&b)]);
    for f in ["sequences.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_eq!(fs::read_to_string(a.join("sequences.jsonl")).unwrap().lines().count(), 1000);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "singleton");

    for kind in ["mixed", "mixed-composite"] {
        let out = dir.path().join(kind);
        ok(&["simulate", "--kind", kind, "--seed", "1", "--out", s(&out)]);
        let n = fs::read_to_string(out.join("sequences.jsonl")).unwrap().lines().count();
        assert_eq!(n, 6000);
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--kind", "composite", "--seed", "9", "--out", s(&a)]);
    let status = Command::new(env!("CARGO_BIN_EXE_appd"))
        .args(["simulate", "--kind", "composite", "--out", s(&b)])
        .env("APPD_SEED", "9")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        fs::read(a.join("sequences.jsonl")).unwrap(),
        fs::read(b.join("sequences.jsonl")).unwrap()
    );
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["simulate", "--kind", "bogus", "--out", s(dir.path())]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["train", "--out", "x.json"]), 2);
}

#[test]
fn invalid_data_exits_three_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"horizon\":1.0,\"events\":[{\"t\":0.5},{\"t\":0.4}]}\n").unwrap();
    let out = appd(&["train", "--data", s(&bad), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-strict ordering at index 1"));

    let garbage = dir.path().join("garbage.jsonl");
    fs::write(&garbage, "not json\n").unwrap();
    assert_eq!(code(&["train", "--data", s(&garbage), "--out", s(&dir.path().join("m.json"))]), 3);
}

#[test]
fn zero_iterations_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = dir.path().join("m0.json");
    let config = tiny_config(dir.path());
    ok(&[
        "train", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt), "--iterations", "0", "--seed", "4",
    ]);
    let loaded = Checkpoint::load(&ckpt).unwrap();
    let sequences: Vec<_> = appd_core::events::load_jsonl(&data)
        .unwrap()
        .into_iter()
        .filter(|s| s.is_anomalous())
        .collect();
    let init = initialize(&sequences, &loaded.config).unwrap();
    assert_eq!(loaded.detector.flatten().values, init.detector.flatten().values);
    assert_eq!(loaded.generator.as_ref().unwrap(), &init.generator);
    assert_eq!(loaded.resume.as_ref().unwrap().iterations_done, 0);
}

#[test]
fn default_config_is_echoed_into_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = dir.path().join("m.json");
    ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--iterations", "0"]);
    let c = Checkpoint::load(&ckpt).unwrap().config;
    let d = TrainConfig::default();
    assert_eq!((c.features, c.generated_batch, c.real_batch, c.inner_steps), (20, 32, 32, 5));
    assert_eq!(c.outer_iterations, 0);
    assert_eq!(d.outer_iterations, 1000);
}

#[test]
fn training_twice_gives_identical_checkpoints_and_resume_matches() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let a = trained(dir.path(), &data);
    let first = fs::read(&a).unwrap();
    let history = fs::read(dir.path().join("model.history.csv")).unwrap();
    let _ = trained(dir.path(), &data);
    assert_eq!(first, fs::read(&a).unwrap());
    assert_eq!(history, fs::read(dir.path().join("model.history.csv")).unwrap());

    let config = tiny_config(dir.path());
    let split = dir.path().join("split.json");
    let mut one = vec!["train", "--data", s(&data), "--config", s(&config), "--out", s(&split), "--seed", "1"];
    one.extend_from_slice(TINY);
    let pos = one.iter().position(|a| *a == "--iterations").unwrap();
    one[pos + 1] = "1";
    ok(&one);
    one[pos + 1] = "2";
    one.push("--resume");
    ok(&one);
    assert_eq!(fs::read(&split).unwrap(), first);
}

#[test]
fn threshold_shapes_and_zero_scale() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = trained(dir.path(), &data);
    ok(&["threshold", "--checkpoint", s(&ckpt), "--n-generated", "32", "--max-step", "40"]);
    let curve = Checkpoint::load(&ckpt).unwrap().threshold.unwrap();
    assert_eq!(curve.values.len(), 40);
    assert_eq!(curve.n_generated, 32);

    let zero = dir.path().join("zero.json");
    ok(&["threshold", "--checkpoint", s(&ckpt), "--scale", "0", "--out", s(&zero)]);
    let curve = Checkpoint::load(&zero).unwrap().threshold.unwrap();
    assert!(curve.values.iter().all(|&v| v == 0.0));
}

#[test]
fn missing_generator_or_curve_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = trained(dir.path(), &data);
    let out = dir.path().join("d.jsonl");
    assert_eq!(code(&["detect", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&out)]), 4);
    assert_eq!(code(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&out)]), 4);

    let mut c = Checkpoint::load(&ckpt).unwrap();
    c.generator = None;
    let stripped = dir.path().join("nogen.json");
    c.save(&stripped).unwrap();
    assert_eq!(code(&["threshold", "--checkpoint", s(&stripped)]), 4);

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"format_version\": 42}").unwrap();
    assert_eq!(code(&["threshold", "--checkpoint", s(&broken)]), 4);
}

#[test]
fn detect_and_evaluate_outputs_are_shaped_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = trained(dir.path(), &data);
    ok(&["threshold", "--checkpoint", s(&ckpt), "--n-generated", "16", "--max-step", "12", "--seed", "2"]);

    let (d1, d2) = (dir.path().join("d1.jsonl"), dir.path().join("d2.jsonl"));
    ok(&["detect", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&d1)]);
    ok(&["detect", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&d2)]);
    assert_eq!(fs::read(&d1).unwrap(), fs::read(&d2).unwrap());
    let text = fs::read_to_string(&d1).unwrap();
    assert_eq!(text.lines().count(), 80);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["is_anomaly"].as_bool().unwrap(), !v["stop_index"].is_null());
    }

    let (e1, e2) = (dir.path().join("e1.csv"), dir.path().join("e2.csv"));
    ok(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&e1)]);
    ok(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&e2)]);
    assert_eq!(fs::read(&e1).unwrap(), fs::read(&e2).unwrap());
    let metrics = fs::read_to_string(&e1).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows[0], "step,precision,recall,f1,U,V,UiV,degenerate");
    assert_eq!(rows.len(), 13);
    assert!(rows[12].starts_with("12,"));
    let traces = fs::read_to_string(dir.path().join("e1.traces.csv")).unwrap();
    assert_eq!(traces.lines().next().unwrap(), "step,anomalous_mean,normal_mean,generated_mean,threshold");
    assert_eq!(traces.lines().count(), 13);
}

#[test]
fn online_threshold_flag_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = trained(dir.path(), &data);
    let out = dir.path().join("online.jsonl");
    ok(&[
        "detect", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&out), "--online-threshold",
        "--n-generated", "4",
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 80);
}
