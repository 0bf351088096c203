use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("QVIT_DATA_ROOT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_run_dir(out_dir: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(out_dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

const TINY: &[&str] =
    &["--image-size", "8", "--n-per-class", "4", "--epochs", "2", "--batch-size", "4", "--seed", "3"];

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mut args = vec!["train", "--out-dir", out, "--tag", "smoke"];
    args.extend_from_slice(TINY);
    let o = qvit(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let run = only_run_dir(tmp.path());
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-smoke"));
    for f in ["config.toml", "checkpoint.qvit", "metrics.csv", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,split,loss,acc,auc"));
    assert!(csv.lines().any(|l| l.contains(",test,")));

    let ckpt = run.join("checkpoint.qvit");
    let o = qvit(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "val"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("val"));

    // the saved config reproduces the run
    let cfg = run.join("config.toml");
    let again = tmp.path().join("again");
    let o = qvit(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", again.to_str().unwrap()]);
    assert!(o.status.success());
    let first = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let second = std::fs::read_to_string(only_run_dir(&again).join("metrics.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn distill_writes_teacher_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mut args =
        vec!["distill", "--out-dir", out, "--kd-epochs", "1", "--teacher-epochs", "1", "--finetune-epochs", "1"];
    args.extend_from_slice(TINY);
    let o = qvit(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = only_run_dir(tmp.path());
    for f in ["teacher_bundle.qkd", "teacher.qvit", "kd_losses.csv", "checkpoint.qvit", "metrics.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn inspect_reports_counts() {
    let o = qvit(&["inspect", "--model", "qvit4_28", "--in-channels", "3", "--n-classes", "5", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["quantum_sa_per_block"], 24);
    assert_eq!(v["classical_sa_per_block"], 48);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seeed = 1\n").unwrap();
    assert_eq!(qvit(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(qvit(&["train", "--model", "nope"]).status.code(), Some(2));

    let missing = tmp.path().join("none.toml");
    assert_eq!(qvit(&["train", "--config", missing.to_str().unwrap()]).status.code(), Some(3));

    let junk = tmp.path().join("junk.npz");
    std::fs::write(&junk, b"not a zip").unwrap();
    let o = qvit(&["train", "--dataset", junk.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let o = qvit(&["train", "--dataset", "retinamnist"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
