use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn iclmu(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iclmu"));
    cmd.current_dir(dir).args(args).env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A toy fixture with a shorter warm-up and a one-template sweep.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&iclmu(dir.path(), &["generate-toy", "toy"], &[]));
    let path = dir.path().join("toy/iclmu.toml");
    let config = fs::read_to_string(&path).unwrap().replace("steps = 150", "steps = 8");
    let sweep = "\n[sweep]\ninstruction = [\"Classify these.\"]\noptions_header = [\"Options\"]\n\
                 demo_indicator = [\"Example\"]\ninput_indicator = [\"Input\"]\nkv_separator = [\":\"]\n\
                 demo_separator = [\"\\n\"]\n";
    fs::write(&path, config + sweep).unwrap();
    dir
}

fn runs(dir: &Path, command: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join("toy/runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().ends_with(&format!("-{command}")))
        .collect();
    v.sort();
    v
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn warmup_is_reproducible_and_writes_a_manifest() {
    let dir = fixture();
    let args = ["warmup", "--config", "toy/iclmu.toml"];
    ok(&iclmu(dir.path(), &args, &[]));
    ok(&iclmu(dir.path(), &args, &[]));
    let [a, b] = runs(dir.path(), "warmup").try_into().unwrap();
    let digest = |run: &Path| json(&run.join("warmup.json"))["checkpoint_sha256"].clone();
    assert_eq!(digest(&a), digest(&b));
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config"]["warmup"]["steps"], 8);
    assert!(manifest["inputs"].as_object().unwrap().len() >= 8);
    assert!(!a.join(".lock").exists());
    assert!(a.join("log.txt").exists() && a.join("config.toml").exists());

    let out = iclmu(dir.path(), &["warmup", "--config", "toy/iclmu.toml", "--seed", "1"], &[]);
    ok(&out);
    let c = runs(dir.path(), "warmup").pop().unwrap();
    assert_ne!(digest(&c), digest(&a));
}

#[test]
fn environment_sits_between_file_and_flags() {
    let dir = fixture();
    let args = ["warmup", "--config", "toy/iclmu.toml"];
    ok(&iclmu(dir.path(), &args, &[("ICLMU_SEED", "5"), ("ICLMU_K", "3")]));
    let manifest = json(&runs(dir.path(), "warmup")[0].join("manifest.json"));
    assert_eq!((manifest["seed"].clone(), manifest["config"]["retrieval"]["k"].clone()), (5.into(), 3.into()));
    ok(&iclmu(dir.path(), &["warmup", "--config", "toy/iclmu.toml", "--seed", "7"], &[("ICLMU_SEED", "5")]));
    let manifest = json(&runs(dir.path(), "warmup")[1].join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["retrieval"]["k"], 6);
}

#[test]
fn configuration_errors_exit_nonzero() {
    let dir = fixture();
    let out = iclmu(
        dir.path(),
        &["warmup", "--config", "toy/iclmu.toml", "--dataset-manifest", "missing.toml"],
        &[],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset manifest") && err.contains("missing.toml"), "{err}");
    let manifest = json(&runs(dir.path(), "warmup")[0].join("manifest.json"));
    assert!(manifest["status"].as_str().unwrap().starts_with("error"));

    let out = iclmu(dir.path(), &["eval", "--config", "toy/iclmu.toml"], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
    let out = iclmu(dir.path(), &["eval", "--config", "toy/iclmu.toml", "--init", "warm"], &[]);
    assert!(!out.status.success());
}

#[test]
fn eval_threshold_sweep_and_report() {
    let dir = fixture();
    ok(&iclmu(dir.path(), &["warmup", "--config", "toy/iclmu.toml"], &[]));
    let ckpt = runs(dir.path(), "warmup")[0].join("checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();

    ok(&iclmu(dir.path(), &["eval", "--config", "toy/iclmu.toml", "--checkpoint", ckpt], &[]));
    let eval = runs(dir.path(), "eval").pop().unwrap();
    let report = json(&eval.join("reports/eval.json"));
    let draws = report["draws"].as_array().unwrap();
    assert_eq!(draws.len(), 3);
    for d in draws {
        assert!(d["closed"]["task_accuracy"].as_f64().unwrap() <= d["closed"]["mc_accuracy"].as_f64().unwrap());
        assert!(d["open_world"].is_object());
    }
    assert_eq!(report["task_accuracy"]["n"], 3);
    assert_eq!(fs::read_dir(eval.join("predictions")).unwrap().count(), 3);

    ok(&iclmu(
        dir.path(),
        &["eval", "--config", "toy/iclmu.toml", "--checkpoint", ckpt, "--ways", "3", "--shots", "1"],
        &[],
    ));

    ok(&iclmu(dir.path(), &["threshold", "--config", "toy/iclmu.toml", "--checkpoint", ckpt], &[]));
    let threshold = runs(dir.path(), "threshold").pop().unwrap();
    let curve = fs::read_to_string(threshold.join("reports/threshold.csv")).unwrap();
    assert_eq!(curve.lines().count(), 102);

    ok(&iclmu(dir.path(), &["sweep", "--config", "toy/iclmu.toml"], &[]));
    let sweep = runs(dir.path(), "sweep").pop().unwrap();
    assert_eq!(json(&sweep.join("reports/sweep.json"))["results"].as_array().unwrap().len(), 1);

    for input in [&sweep, &eval, &threshold] {
        let out = iclmu(dir.path(), &["report", "--config", "toy/iclmu.toml", "--input", input.to_str().unwrap()], &[]);
        ok(&out);
        assert!(!out.stdout.is_empty());
    }
    let out = iclmu(dir.path(), &["report", "--config", "toy/iclmu.toml", "--input", "toy"], &[]);
    assert!(!out.status.success());
}
